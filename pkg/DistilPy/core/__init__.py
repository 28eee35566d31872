from DistilPy.core.types import *
from DistilPy.core.configfile import *
from DistilPy.core.seeding import *
from DistilPy.core.store import *
