"""graphtrack: online-adaptive graph-network control of multi-agent
target tracking — topologies and spectral bounds, network forward passes
with analytic cross-node weight Jacobians, the distributed
observer/controller/update laws, an RK4 scenario simulator, and the
experiment-matrix harness behind the CLI."""

__version__ = "0.1.0"
