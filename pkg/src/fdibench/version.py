__version__ = "0.1.0"

# Name recorded in run sidecars so a reader can re-create the byte stream.
RNG_ALGORITHM = "numpy-philox4x64-10"
