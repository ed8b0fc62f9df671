from .feynman import (
    FeynmanSpec,
    feynman_generate,
    export_csv,
    get_equation,
    registered_equations,
    load_range_table,
    build_registry,
)
from .cifar import (
    LabeledImage,
    CifarArrays,
    cifar_load,
    parse_records,
    read_cifar_file,
    record_bytes,
    load_cifar_dir,
)
from .dataset import (
    TaskInfo,
    ArrayDataset,
    SplitDataset,
    DataLoader,
    make_split,
    parse_task,
    valid_tasks,
    load_task,
)
