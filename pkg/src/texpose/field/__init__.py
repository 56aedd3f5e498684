from .encoding import encode, encoded_dim
from .sampling import RaySamples, sample_bins, sample_ray
from .compositing import composite
from .neural_field import FieldConfig, NeuralField
