from DistilPy.bench.pipeline import *
from DistilPy.bench.sweep import *
from DistilPy.bench.report import *
from DistilPy.bench.shell import *
