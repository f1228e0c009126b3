# 运行登记 ORM 表
