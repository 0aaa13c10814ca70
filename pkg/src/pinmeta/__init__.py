"""Find packages pinned in Dockerfiles across repositories and keep their versions in step."""

__version__ = "0.1.0"
