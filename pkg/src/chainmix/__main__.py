from .harness import entrypoint

entrypoint()
