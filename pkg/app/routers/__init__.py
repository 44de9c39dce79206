# FastAPI routers: problems, extremals, guidance
