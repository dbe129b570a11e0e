"""
Compensated floating-point kernels and extrapolation ODE solvers
"""
