#pragma once

#include <cstdint>
#include <utility>

#include "tj/ortho.h"
#include "tj/tensor.h"

namespace tj {

enum class SigmaMode { Approximated, Random };

// Gram matrix X^T X of an N x d representation; symmetric PSD.
TensorPtr gram(const TensorPtr& x0);

struct EigenApprox {
    TensorPtr sigma_raw;   // length d, diag(Q^T G Q)
    TensorPtr recon_loss;  // scalar, ||G - Q diag(sigma) Q^T||_F^2
};

// Approximate the spectrum of a symmetric g with a learnable orthogonal
// basis. For a fixed basis, diag(Q^T g Q) is the Frobenius-optimal diagonal;
// the reconstruction loss is differentiable into the basis raw parameter.
EigenApprox approx_eigen(const TensorPtr& g, OrthogonalParam& u);

// Min-max rescale of a spectrum to [0,1] with the top entry pinned at 1.
// A constant spectrum maps to all-ones.
TensorPtr standardize(const TensorPtr& sigma_raw);

// Seeded uniform draws in [0,1], standardized; the initial spectrum of the
// random-sigma model variant.
TensorPtr random_sigma(std::int64_t d, std::uint64_t seed);

// Spectrum of a per-forward pass: standardized sigma plus the reconstruction
// loss when approximation is active.
struct SpectralState {
    TensorPtr sigma;       // length d, standardized
    TensorPtr recon_loss;  // scalar or nullptr in Random mode
    SigmaMode mode = SigmaMode::Approximated;
};

// ---- executable spectral checks -------------------------------------------

struct ActivationBoundCheck {
    double empirical = 0.0;  // max ||W x|| over random unit x
    double sigma1 = 0.0;     // top singular value via power iteration
};

// Samples `trials` random unit vectors (trials >= 100) and contrasts the
// empirical expansion against the top singular value of W. Enforces
// empirical <= sigma1 + 1e-8.
ActivationBoundCheck check_linear_activation_bound(const Tensor& w, int trials,
                                                   std::uint64_t seed = 12345);

// Dominant eigenvalue magnitude of a column-stochastic matrix via power
// iteration; the input is validated (columns sum to 1 +- 1e-9, entries >= 0).
double check_stochastic_eigenvalue(const Tensor& m);

// Spectral norm ||M||_2 via power iteration on M^T M.
double operator_norm(const Tensor& m, double tol = 1e-12, int max_iters = 20000);

}  // namespace tj
