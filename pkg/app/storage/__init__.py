"""File storage: safetensors containers and atomic writes."""
