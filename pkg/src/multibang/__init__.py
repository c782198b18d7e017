# 多重bang控制核心模块
