"""
Numerical engine: matrix functions, LTI algebra, Youla generators,
sampled-data redesign, performance analysis and hybrid simulation
"""
