"""Deep-feature kNN graphs and graph-convolution branches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist

from .errors import ContractError
from .numkit import Affine, BatchNorm, Module, Tensor, ops


@dataclass
class GraphData:
    """Binary symmetric adjacency (CSR) and its self-looped normalized form."""

    adjacency: sp.csr_matrix
    k_used: int
    _normalized: Optional[sp.csr_matrix] = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def normalized(self) -> sp.csr_matrix:
        if self._normalized is None:
            self._normalized = normalize_adjacency(self.adjacency)
        return self._normalized

    def edges(self) -> np.ndarray:
        """Undirected edges as sorted ``(i, j)`` rows with ``i < j``."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        pairs = np.stack([coo.row, coo.col], axis=1).astype(np.int64)
        return pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]

    def edge_list_text(self) -> str:
        return "".join(f"{i} {j}\n" for i, j in self.edges())


def distance_matrix(z) -> np.ndarray:
    """Pairwise Euclidean distances between the rows of ``z``."""
    arr = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"feature matrix must be 2-D, got shape {arr.shape}")
    dis = cdist(arr, arr, metric="euclidean")
    np.fill_diagonal(dis, 0.0)
    return dis


def knn_adjacency(dis: np.ndarray, k: int) -> GraphData:
    """Link every node to its ``k`` nearest others, then OR-symmetrize.

    Distance ties go to the lower node index.
    """
    dis = np.asarray(dis, dtype=np.float64)
    n = dis.shape[0]
    if dis.shape != (n, n):
        raise ContractError(f"distance matrix must be square, got {dis.shape}")
    if not 1 <= k <= n - 1:
        raise ContractError(f"k={k} must lie in [1, {n - 1}] for {n} nodes")
    masked = dis.copy()
    np.fill_diagonal(masked, np.inf)
    nbrs = np.argsort(masked, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    directed = sp.csr_matrix((np.ones(n * k), (rows, nbrs.reshape(-1))), shape=(n, n))
    sym = ((directed + directed.T) > 0).astype(np.float64).tocsr()
    sym.sort_indices()
    return GraphData(adjacency=sym, k_used=k)


def build_graph(z, k: int) -> GraphData:
    return knn_adjacency(distance_matrix(z), k)


def normalize_adjacency(adjacency) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degrees of ``A + I``."""
    a = sp.csr_matrix(adjacency, dtype=np.float64)
    a_tilde = a + sp.identity(a.shape[0], format="csr")
    deg = np.asarray(a_tilde.sum(axis=1)).reshape(-1)
    inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    out = (inv_sqrt @ a_tilde @ inv_sqrt).tocsr()
    out.sort_indices()
    return out


class GcnLayer(Module):
    """ReLU(BN(Â H W + b))."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        self.lin = Affine(n_in, n_out, rng)
        self.bn = BatchNorm(n_out)

    def __call__(self, h: Tensor, a_hat, training: bool) -> Tensor:
        return gcn_layer(h, a_hat, self, training)


def gcn_layer(h: Tensor, a_hat, layer: GcnLayer, training: bool) -> Tensor:
    propagated = ops.spmm(a_hat, ops.matmul(h, layer.lin.weight))
    return ops.relu(layer.bn(ops.add_bias(propagated, layer.lin.bias), training))


class GcnBranch(Module):
    """A stack of ``depth`` graph-convolution layers; depth 0 is the identity."""

    def __init__(self, n_in: int, hidden: int, depth: int, rng: np.random.Generator):
        if depth < 0:
            raise ContractError(f"branch depth must be >= 0, got {depth}")
        dims = [n_in] + [hidden] * depth
        self.layers: List[GcnLayer] = [GcnLayer(dims[i], dims[i + 1], rng) for i in range(depth)]
        self._out_dim = dims[-1]

    @property
    def out_dim(self) -> int:
        return self._out_dim

    def __call__(self, z: Tensor, graph: GraphData, training: bool) -> Tensor:
        if z.shape[0] != graph.n_nodes:
            raise ContractError(f"{z.shape[0]} feature rows for a graph of {graph.n_nodes} nodes")
        h = z
        a_hat = graph.normalized
        for layer in self.layers:
            h = layer(h, a_hat, training)
        return h


def gcn_branch(z: Tensor, graph: GraphData, branch: GcnBranch, training: bool) -> Tensor:
    return branch(z, graph, training)
