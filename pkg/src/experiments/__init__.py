# 基准算例与REG诊断
