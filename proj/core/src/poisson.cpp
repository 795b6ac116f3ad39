// SPDX-License-Identifier: Apache-2.0
#include "vlmoe/poisson.hpp"

#include <cmath>
#include <sstream>

#include "vlmoe/errors.hpp"

namespace vlmoe {

namespace {
constexpr int kDx[4] = {1, -1, 0, 0};
constexpr int kDy[4] = {0, 0, 1, -1};
}  // namespace

PoissonResult poisson_solve_region(Image& img, int x0, int y0,
                                   const std::vector<uint8_t>& mask, int mh,
                                   int mw, const Image* guidance, double tol,
                                   int max_sweeps) {
  if (mask.size() != static_cast<std::size_t>(mh) * mw)
    throw ShapeError("poisson: mask extent mismatch");
  if (guidance && (guidance->height != mh || guidance->width != mw ||
                   guidance->channels != img.channels))
    throw ShapeError("poisson: guidance extent mismatch");

  auto masked = [&mask, mh, mw](int my, int mx) {
    return my >= 0 && my < mh && mx >= 0 && mx < mw &&
           mask[static_cast<std::size_t>(my) * mw + mx] != 0;
  };

  std::vector<std::pair<int, int>> interior;  // window coordinates
  for (int my = 0; my < mh; ++my)
    for (int mx = 0; mx < mw; ++mx)
      if (masked(my, mx)) interior.emplace_back(my, mx);
  if (interior.empty()) throw ValueError("poisson: empty mask interior");
  for (auto [my, mx] : interior) {
    for (int q = 0; q < 4; ++q) {
      if (!img.in_bounds(y0 + my + kDy[q], x0 + mx + kDx[q]))
        throw ValueError("poisson: mask pixel touches the image border");
    }
  }

  const int channels = img.channels;
  // divergence of the guidance field per interior pixel and channel
  std::vector<double> div(interior.size() * static_cast<std::size_t>(channels),
                          0.0);
  if (guidance) {
    for (std::size_t i = 0; i < interior.size(); ++i) {
      auto [my, mx] = interior[i];
      for (int ch = 0; ch < channels; ++ch) {
        double d = 0.0;
        for (int q = 0; q < 4; ++q) {
          const int ny = my + kDy[q], nx = mx + kDx[q];
          const double gn = (ny >= 0 && ny < mh && nx >= 0 && nx < mw)
                                ? guidance->at(ny, nx, ch)
                                : guidance->at(my, mx, ch);
          d += guidance->at(my, mx, ch) - gn;
        }
        div[i * static_cast<std::size_t>(channels) + ch] = d;
      }
    }
  }

  PoissonResult result;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (std::size_t i = 0; i < interior.size(); ++i) {
      auto [my, mx] = interior[i];
      for (int ch = 0; ch < channels; ++ch) {
        double nb = 0.0;
        for (int q = 0; q < 4; ++q)
          nb += img.at(y0 + my + kDy[q], x0 + mx + kDx[q], ch);
        img.at(y0 + my, x0 + mx, ch) =
            (nb + div[i * static_cast<std::size_t>(channels) + ch]) / 4.0;
      }
    }
    // residual measured after the sweep so the converged state satisfies the
    // equation pointwise, not just mid-update
    double max_res = 0.0;
    for (std::size_t i = 0; i < interior.size(); ++i) {
      auto [my, mx] = interior[i];
      for (int ch = 0; ch < channels; ++ch) {
        double nb = 0.0;
        for (int q = 0; q < 4; ++q)
          nb += img.at(y0 + my + kDy[q], x0 + mx + kDx[q], ch);
        const double res =
            std::abs(4.0 * img.at(y0 + my, x0 + mx, ch) - nb -
                     div[i * static_cast<std::size_t>(channels) + ch]);
        max_res = std::max(max_res, res);
      }
    }
    result.sweeps = sweep + 1;
    result.residual = max_res;
    if (max_res < tol) return result;
  }
  std::ostringstream os;
  os << "poisson solver did not converge: residual " << result.residual
     << " after " << result.sweeps << " sweeps (tol " << tol << ")";
  throw NumericError(os.str());
}

Image poisson_blend(const Image& src_patch, const Image& dst,
                    const std::vector<uint8_t>& mask, int x0, int y0,
                    double tol, int max_sweeps) {
  Image out = dst;
  poisson_solve_region(out, x0, y0, mask, src_patch.height, src_patch.width,
                       &src_patch, tol, max_sweeps);
  return out;
}

}  // namespace vlmoe
