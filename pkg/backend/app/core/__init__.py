# 配置、日志、错误与数据库
