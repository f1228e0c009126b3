# datasets / runs / analysis 路由
