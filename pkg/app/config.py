"""Configuration management using Pydantic Settings."""

from pydantic_settings import BaseSettings
from pathlib import Path


class Settings(BaseSettings):
    """Process settings; only the output directory may come from the environment."""

    # Output
    OUTPUT_DIR: Path = Path("./runs")

    class Config:
        env_prefix = "PRUNE_LAB_"
        env_file = ".env"
        env_file_encoding = "utf-8"
        extra = "ignore"


# Special tokens
SOT_TOKEN = 0
EOT_TOKEN = 1
FIRST_CONTENT_TOKEN = 2

# Artifacts
FORMAT_VERSION = 1
CSV_SIGNIFICANT_DIGITS = 6
LOSS_LOG_EVERY = 50

# Sparse storage: one value plus one index per nonzero
VALUE_BYTES = 4
INDEX_BYTES = 4

# Create settings instance
settings = Settings()
