// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vlmoe/tensor.hpp"

namespace vlmoe {

// [m x n] . [n x p] -> [m x p]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m x n] . [p x n]^T -> [m x p]; row-dot form used for attention scores
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// elementwise, identical shapes
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// [r x c] + [c], broadcast over rows
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

Tensor gelu(const Tensor& x);

// slices along `axis` each sum to 1; stabilized by max subtraction
Tensor softmax(const Tensor& x, int axis);

// per-row normalization over the last axis, then gain/bias
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// mean of -log softmax(logits)[t, target_t] over mask-true rows
Tensor cross_entropy_logits(const Tensor& logits,
                            const std::vector<int>& targets,
                            const std::vector<uint8_t>& mask);

Tensor sum(const Tensor& x);
// [r x c] -> [c], column means
Tensor mean_rows(const Tensor& x);

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
// selected (row, col) entries of a 2-D tensor -> rank-1 [n]
Tensor gather_entries(const Tensor& x,
                      const std::vector<std::pair<int, int>>& coords);

// 2-D concatenation along axis 0 or 1
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor slice_cols(const Tensor& x, int c0, int c1);

// out[row_index[e][i], :] += weights[e][i] * blocks[e][i, :]
// Every block row lands on exactly one output row per (e, i) pair; rows not
// referenced stay zero. Used to combine per-expert outputs.
Tensor weighted_scatter_rows(int rows, int cols,
                             const std::vector<Tensor>& blocks,
                             const std::vector<std::vector<int>>& row_index,
                             const std::vector<Tensor>& weights);

// indices of the k largest entries, descending; ties resolved to the lower
// index
std::vector<int> topk_indices(const double* v, int n, int k);
std::vector<int> topk_indices(const std::vector<double>& v, int k);

// channel-wise bilinear resampling of a [g1*g1 x c] grid onto [g2*g2 x c]
// with corner alignment
Tensor interpolate_grid_bilinear(const Tensor& grid, int g1, int g2);

}  // namespace vlmoe
