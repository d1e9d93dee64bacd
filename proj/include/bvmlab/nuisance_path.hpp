#pragma once

#include <Eigen/Dense>

#include "bvmlab/errors.hpp"

namespace bvmlab {

// A nuisance function represented by values on a knot grid in [0,1] with
// piecewise-linear interpolation.
struct NuisancePath {
    Eigen::VectorXd knots;
    Eigen::VectorXd values;

    int size() const { return static_cast<int>(knots.size()); }

    double operator()(double v) const {
        const int m = size();
        if (v <= knots[0]) return values[0];
        if (v >= knots[m - 1]) return values[m - 1];
        const double* begin = knots.data();
        int j = static_cast<int>(std::upper_bound(begin, begin + m, v) - begin);
        const double t = (v - knots[j - 1]) / (knots[j] - knots[j - 1]);
        return values[j - 1] + t * (values[j] - values[j - 1]);
    }
};

inline NuisancePath make_nuisance_path(Eigen::VectorXd knots, Eigen::VectorXd values) {
    if (knots.size() < 2) throw ValidationError("NuisancePath: need at least 2 knots");
    if (knots.size() != values.size())
        throw ValidationError("NuisancePath: knots and values lengths differ");
    if (knots[0] < 0.0 || knots[knots.size() - 1] > 1.0)
        throw ValidationError("NuisancePath: knots must lie in [0,1]");
    for (int i = 0; i + 1 < knots.size(); ++i)
        if (!(knots[i] < knots[i + 1]))
            throw ValidationError("NuisancePath: knots not strictly increasing");
    for (int i = 0; i < values.size(); ++i)
        if (!std::isfinite(values[i])) throw ValidationError("NuisancePath: non-finite value");
    return NuisancePath{std::move(knots), std::move(values)};
}

// Constant path on [0,1].
inline NuisancePath constant_path(double value, int m = 2) {
    Eigen::VectorXd k(m), v(m);
    for (int i = 0; i < m; ++i) {
        k[i] = static_cast<double>(i) / (m - 1);
        v[i] = value;
    }
    return NuisancePath{std::move(k), std::move(v)};
}

}  // namespace bvmlab
