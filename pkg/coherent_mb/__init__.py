# coherent-mb: Maxwell-Bloch pulse propagation in an inhomogeneously broadened absorber
__version__ = '1.1.0'
