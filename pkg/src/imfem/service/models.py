"""Request/response models of the solve service."""

from typing import List, Literal, Optional

from pydantic import BaseModel, Field

METHOD_NAMES = ("P1", "P1GLS", "Sigma1Exact", "Sigma1h", "Sigma2h", "Sigma2hGLS")

MethodName = Literal["P1", "P1GLS", "Sigma1Exact", "Sigma1h", "Sigma2h", "Sigma2hGLS"]
TestName = Literal["i", "ii", "iii", "iv", "v", "vi", "vii"]


class FieldPayload(BaseModel):
    """Nodal values of a P1 field on the uniform mesh with n subdivisions."""

    n: int = Field(ge=1)
    values: List[float]


class SigmaRequest(BaseModel):
    test: TestName
    h_inv: int = Field(ge=1)
    H_inv: int = Field(default=16, ge=1)
    measure: Literal["sigma1", "sigma2_0"] = "sigma1"
    lam: float = Field(default=1e-3, gt=0)
    tol: float = Field(default=1e-3, gt=0)
    max_iter: int = Field(default=500, ge=1)
    quad_degree: int = 5


class SigmaResponse(BaseModel):
    field: FieldPayload
    iterations: int
    final_deviation: float
    mean: float
    element_positive_on_coarse: bool


class SolveRequest(BaseModel):
    test: TestName
    method: MethodName
    H_inv: int = Field(default=16, ge=1)
    h_inv: Optional[int] = Field(default=None, ge=1)
    quad_degree: int = 5
    lam: float = Field(default=1e-3, gt=0)
    tol: float = Field(default=1e-3, gt=0)
    max_iter: int = Field(default=500, ge=1)
    gls_field: Literal["B2", "B2bar"] = "B2"
    cache_dir: Optional[str] = None


class SolveResponse(BaseModel):
    field: Optional[FieldPayload]
    admissible: bool
    kappa: Optional[float] = None
    iterations: int = 0


class TableRequest(BaseModel):
    tests: List[TestName]
    methods: List[MethodName] = list(METHOD_NAMES)
    H_inv: int = Field(default=16, ge=1)
    h_inv_list: Optional[List[int]] = None
    n_ref: int = Field(default=512, ge=4)
    lam: float = Field(default=1e-3, gt=0)
    tol: float = Field(default=1e-3, gt=0)
    max_iter: int = Field(default=500, ge=1)
    quad_degree: int = 5
    gls_field: Literal["B2", "B2bar"] = "B2"
    cache_dir: Optional[str] = None


class TableRow(BaseModel):
    test: str
    method: str
    H_inv: int
    h_inv: Optional[int]
    err: Optional[float]
    iterations: int
    offline_s: float
    online_s: float
    admissible: bool
    kappa: Optional[float]


class TableResponse(BaseModel):
    rows: List[TableRow]


class ConvergenceRequest(BaseModel):
    study: Literal["sigma1", "manufactured"] = "manufactured"
    # sigma1 study: weight accuracy against the analytic measure
    test: TestName = "i"
    n_list: List[int] = [32, 64, 128]
    H_inv: int = Field(default=16, ge=1)
    # manufactured study: solution accuracy for one method
    method: MethodName = "Sigma1h"
    H_inv_list: List[int] = [16, 32, 64]
    h_ratio: int = Field(default=4, ge=1)
    lam: float = Field(default=1e-3, gt=0)
    tol: float = Field(default=1e-3, gt=0)


class ConvergenceResponse(BaseModel):
    errors: List[float]
    order: float


class CoercivityRequest(BaseModel):
    test: TestName
    H_inv: int = Field(default=16, ge=1)


class CoercivityResponse(BaseModel):
    value: float
