// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "vlmoe/image.hpp"

namespace vlmoe {

struct PoissonResult {
  int sweeps = 0;
  double residual = 0.0;
};

// Gauss-Seidel solve of the discrete Poisson equation over the mask-true
// pixels of an mh x mw window anchored at (x0, y0) in img. Guidance supplies
// the source gradients (same window geometry); passing nullptr solves the
// Laplace equation (smooth in-fill). Mask-false pixels hold the Dirichlet
// boundary and are never written. Every mask-true pixel must have all four
// neighbours inside the image.
PoissonResult poisson_solve_region(Image& img, int x0, int y0,
                                   const std::vector<uint8_t>& mask, int mh,
                                   int mw, const Image* guidance,
                                   double tol = 1e-4, int max_sweeps = 5000);

// Composites src_patch onto a copy of dst at (x0, y0): Dirichlet boundary
// from dst, guidance gradients from src_patch. Throws NumericError with the
// final residual when the sweep cap is hit.
Image poisson_blend(const Image& src_patch, const Image& dst,
                    const std::vector<uint8_t>& mask, int x0, int y0,
                    double tol = 1e-4, int max_sweeps = 5000);

}  // namespace vlmoe
