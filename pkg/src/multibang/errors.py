#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
多重bang控制 - 异常类型
"""


class MultibangError(Exception):
    """所有求解器异常的基类"""


class DomainError(MultibangError, ValueError):
    """取值超出定义域（例如 v 不在 [u_1, u_d] 内，或 x 不在 [0, 1] 内）"""


class ArgumentError(MultibangError, ValueError):
    """调用前置条件不满足"""


class SolverError(MultibangError, RuntimeError):
    """线性系统分解失败"""


class DiagnosticError(MultibangError):
    """诊断量无法计算（例如可用数据点不足）"""
