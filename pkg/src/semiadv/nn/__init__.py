from semiadv.nn.tensor import Tensor, as_tensor, concat, conv2d, max_pool2d, no_grad
from semiadv.nn.layers import Conv2d, Dense, Flatten, MaxPool2d, Model, ReLU, build, cnn, mlp
from semiadv.nn.losses import cross_entropy, mse, one_hot
from semiadv.nn.optim import SGD, Adam, ParamEMA, optimizer_step

__all__ = [
    "Tensor", "as_tensor", "concat", "conv2d", "max_pool2d", "no_grad",
    "Conv2d", "Dense", "Flatten", "MaxPool2d", "Model", "ReLU", "build", "cnn", "mlp",
    "cross_entropy", "mse", "one_hot",
    "SGD", "Adam", "ParamEMA", "optimizer_step",
]
