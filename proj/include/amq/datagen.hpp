#pragma once

#include <cstdint>

#include "amq/dataset.hpp"
#include "amq/matrix.hpp"

namespace amq {

// One Darcy-flow instance on an n x n node grid over the unit square:
// -div(a grad u) = 1 with u = 0 on the boundary.
struct DarcyField {
    int n = 0;
    Matrix<double> a;  // n x n, strictly positive coefficient at nodes
    Matrix<double> u;  // n x n solution, zero on the boundary ring
};

// 5-point finite differences with harmonic-mean face coefficients; banded
// Cholesky plus iterative refinement. Throws if the residual target cannot be
// reached.
Matrix<double> solve_darcy(const Matrix<double>& a, double forcing, double residual_tol = 1e-8);

// Max-norm residual of the discrete system at u.
double darcy_residual_inf(const Matrix<double>& a, const Matrix<double>& u, double forcing);

// Piecewise-constant coefficient field: thresholded smoothed Gaussian noise,
// low/high values 3 and 12.
Matrix<double> darcy_coefficient_field(int n, uint64_t seed);

DarcyField generate_darcy_sample(int n, uint64_t seed);

// Subsample the grid by stride, attach normalized positions, coefficient
// features and solution targets, and connect with a k-nearest-neighbour graph
// with self-loops.
MeshSample grid_to_graph(const DarcyField& field, int stride, int k);

Dataset generate_dataset(int grid_n, int stride, int k, int n_train, int n_val, uint64_t seed);

}  // namespace amq
