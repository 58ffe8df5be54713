from epiforge.constants import VERSION

__version__ = VERSION
