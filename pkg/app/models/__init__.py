# Pydantic schemas: run configs, file formats, API payloads and reports
