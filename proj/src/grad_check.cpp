#include "ltlab/grad_check.hpp"

#include <cmath>
#include <string>

namespace ltlab {

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f,
                        const Matrix& x, double h) {
    if (!(h > 0.0)) throw DimensionError("finite_diff_grad: h must be > 0");
    Matrix grad(x.rows(), x.cols());
    Matrix probe = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            const double orig = probe(i, j);
            probe(i, j) = orig + h;
            const double fp = f(probe);
            probe(i, j) = orig - h;
            const double fm = f(probe);
            probe(i, j) = orig;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw TrainingError("finite_diff_grad: non-finite objective at entry (" +
                                    std::to_string(i) + "," + std::to_string(j) + ")");
            }
            grad(i, j) = (fp - fm) / (2.0 * h);
        }
    }
    return grad;
}

}  // namespace ltlab
