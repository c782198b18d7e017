# 数值基础模块：分段多项式与一维有限元
