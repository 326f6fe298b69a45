#pragma once

#include <cmath>
#include <limits>
#include <optional>

namespace revolv {

// Standard normal CDF via the complementary error function. Deterministic
// across platforms to well under 1e-12 against the erf definition.
inline double normal_cdf(double x) {
    if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
    if (x == std::numeric_limits<double>::infinity()) return 1.0;
    if (x == -std::numeric_limits<double>::infinity()) return 0.0;
    return 0.5 * std::erfc(-x * M_SQRT1_2);
}

inline double normal_pdf(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// Naive Merton distance-to-default inputs. The default barrier is current
// debt plus half of long-term debt; volatility comes from monthly returns.
struct MertonInputs {
    double equity_value = 0.0;     // E = prccq * cshoq, USD millions
    double debt_barrier = 0.0;     // F = dlcq + 0.5 * dlttq, USD millions
    double stock_return_12m = 0.0; // r, trailing twelve-month return, fraction
    double equity_vol = 0.0;       // sigma_E, annualized, fraction
};

struct MertonResult {
    double asset_vol = 0.0;           // sigma_V
    double distance_to_default = 0.0; // +inf when the firm has no debt
    double pd = 0.0;                  // N(-DD), in [0, 1]
};

// sigma_V = w*sigma_E + (1-w)*(0.05 + 0.25*sigma_E) with w = E/(E+F);
// DD = [ln((E+F)/F) + r - 0.5*sigma_V^2] / sigma_V; PD = N(-DD).
// No outstanding debt means PD = 0. The horizon is fixed at one year; the
// printed formula carries no sqrt(T) term and none is introduced here.
inline std::optional<MertonResult> merton_pd(const MertonInputs& in) {
    const double e = in.equity_value;
    const double f = in.debt_barrier;
    if (e < 0.0 || f < 0.0 || in.equity_vol < 0.0) return std::nullopt;
    if (e + f <= 0.0) return std::nullopt;

    MertonResult out;
    if (f == 0.0) {
        out.asset_vol = in.equity_vol;
        out.distance_to_default = std::numeric_limits<double>::infinity();
        out.pd = 0.0;
        return out;
    }
    const double w = e / (e + f);
    out.asset_vol = w * in.equity_vol + (1.0 - w) * (0.05 + 0.25 * in.equity_vol);
    if (out.asset_vol <= 0.0) return std::nullopt;  // unpriceable observation
    out.distance_to_default =
        (std::log((e + f) / f) + in.stock_return_12m - 0.5 * out.asset_vol * out.asset_vol) /
        out.asset_vol;
    out.pd = normal_cdf(-out.distance_to_default);
    return out;
}

} // namespace revolv
