# 批量实验与命令行
