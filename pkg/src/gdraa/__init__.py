"""GPUDirect-RDMA-aware AllReduce and a job-server training framework, emulated in Python."""
__version__ = "0.1.0"
