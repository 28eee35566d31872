# Data / artifact root

ROOT_ENV_VAR = "DISTILPY_ROOT"
DEFAULT_ROOT = "./distilpy-data"
SLOW_TESTS_ENV_VAR = "DISTILPY_SLOW_TESTS"

# Defender budget and balanced score

DEFAULT_CLEAN_DATA_RATIO = 0.05
DEFAULT_ALPHA = 0.5
DEFAULT_ITERATIONS = 1
DEFAULT_SEED = 0

# Experiment grid defaults

DEFAULT_PRETRAIN_DATASET = "CIFAR10"
DEFAULT_DOWNSTREAM_DATASET = "GTSRB"
DEFAULT_ARCHITECTURE = "RN18"
DEFAULT_TEACHER_METHOD = "FT"
DEFAULT_STUDENT_STRATEGY = "WARMUP"
DEFAULT_LOSS_KIND = "ATD"

# Contrastive pre-training

DEFAULT_PRETRAIN_EPOCHS = 300
DEFAULT_LEARNING_RATE = 0.001
DEFAULT_BATCH_SIZE = 256
DEFAULT_TEMPERATURE = 0.5
DEFAULT_AUGMENTATION = "simclr"
AUGMENTATION_POLICIES = ("simclr", "none")

# Distillation and downstream probe

DEFAULT_DISTILL_EPOCHS = 500
DEFAULT_DOWNSTREAM_EPOCHS = 500
PROBE_HIDDEN_WIDTHS = (512, 256)

# Attacks

DEFAULT_TRIGGER_SIZE = 10
DEFAULT_TRIGGER_COLOR = (1.0, 1.0, 1.0)
DEFAULT_TARGET_CLASS = 0
DEFAULT_LAMBDA_EFFECT = 1.0
DEFAULT_LAMBDA_UTILITY = 1.0
DEFAULT_SHADOW_FRACTION = 0.1
DEFAULT_REFERENCE_COUNT = 3
DEFAULT_ATTACK_EPOCHS = 200
DEFAULT_BASSL_POISON_RATIO = 0.5
DEFAULT_BASSL_MIGRATION_FRACTION = 0.6

# Teacher production

DEFAULT_TEACHER_EPOCHS = 50
DEFAULT_PRUNE_FRACTION = 0.1
DEFAULT_PRUNE_DIRECTION = "MOST"
DEFAULT_ANP_BUDGET = 0.4
DEFAULT_ANP_SCOPE = "LAST"
ANP_SCORE_TOLERANCE = 1e-8
DEFAULT_INVERSION_STEPS = 200
DEFAULT_INVERSION_LR = 0.1
DEFAULT_MASK_SPARSITY = 1e-3
INVERSION_INIT_PATTERN = 0.5
INVERSION_INIT_MASK = 0.5

# Distillation losses

DEFAULT_ATTENTION_P = 2.0
DEFAULT_KD_TEMPERATURE = 4.0
NORM_EPSILON = 1e-12

# SYNTH-TINY generator

SYNTH_IMAGE_SIZE = 16
SYNTH_NUM_CLASSES = 3
DEFAULT_SYNTH_TRAIN_SIZE = 600
DEFAULT_SYNTH_TEST_SIZE = 300

# Reports

REPORT_DECIMALS = 2
