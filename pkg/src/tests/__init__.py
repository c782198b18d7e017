# multibang 测试模块
