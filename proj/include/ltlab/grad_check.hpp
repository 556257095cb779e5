#pragma once

#include <functional>

#include "ltlab/matrix.hpp"

namespace ltlab {

/// Central-difference gradient oracle: entry (i,j) is
/// (f(x + h e_ij) - f(x - h e_ij)) / (2h). Throws TrainingError if f
/// returns a non-finite value. h must be > 0.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f,
                        const Matrix& x, double h);

}  // namespace ltlab
