from jarzmle.models.bnn import TinyBnnModel
from jarzmle.models.conjugate import ConjugateGaussianModel
from jarzmle.models.linreg import (
    GaussianLinRegModel,
    PolynomialRegModel,
    StudentTLinRegModel,
    gaussian_evidence,
    gaussian_posterior,
    poly_features,
    student_t_grad_phi,
)
from jarzmle.models.logistic import BayesianLogisticModel, blr_grad_theta, blr_grad_w

__all__ = [
    "BayesianLogisticModel",
    "ConjugateGaussianModel",
    "GaussianLinRegModel",
    "PolynomialRegModel",
    "StudentTLinRegModel",
    "TinyBnnModel",
    "blr_grad_theta",
    "blr_grad_w",
    "gaussian_evidence",
    "gaussian_posterior",
    "poly_features",
    "student_t_grad_phi",
]
