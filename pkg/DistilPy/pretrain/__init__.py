from DistilPy.pretrain.encoders import *
from DistilPy.pretrain.training import *
from DistilPy.pretrain.contrastive import *
from DistilPy.pretrain.checkpoints import *
