# manybody-mpnn 后端包
