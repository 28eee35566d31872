__version__ = "0.1.0"

from DistilPy.base import *
from DistilPy.config import *
from DistilPy.core import *
from DistilPy.data import *
from DistilPy.pretrain import *
from DistilPy.attack import *
from DistilPy.teacher import *
from DistilPy.distill import *
from DistilPy.evaluate import *
from DistilPy.bench import *
