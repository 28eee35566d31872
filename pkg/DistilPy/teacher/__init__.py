from DistilPy.teacher.finetune import *
from DistilPy.teacher.pruning import *
from DistilPy.teacher.moth import *
from DistilPy.teacher.factory import *
