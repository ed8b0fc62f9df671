from .loss import MSELoss, CrossEntropyLoss, build_loss
from .optim import AdamW, AdamState, adamw_step
from .early_stopping import EarlyStopping
