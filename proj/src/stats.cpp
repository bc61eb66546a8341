#include "msef/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "msef/errors.hpp"

namespace msef::stats {

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

double normal_cdf(double z) { return 0.5 * std::erfc(-z / 1.4142135623730951); }

// AS 241 PPND16 (Wichura 1988).
double normal_ppf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InputError("normal_ppf: p must be in (0,1)");
    const double q = p - 0.5;
    if (std::abs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r + 6.7265770927008700853e+4) * r +
                    4.5921953931549871457e+4) * r + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
                 1.3314166789178437745e+2) * r + 3.3871328727963666080e0) /
               (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r + 3.9307895800092710610e+4) * r +
                    2.1213794301586595867e+4) * r + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
                 4.2313330701600911252e+1) * r + 1.0);
    }
    double r = (q < 0.0) ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r +
                   1.27045825245236838258e0) * r + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
              (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r +
                   1.48103976427480074590e-1) * r + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r +
                   2.65321895265761230930e-2) * r + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
              (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r +
                   7.86869131145613259100e-4) * r + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    return (q < 0.0) ? -val : val;
}

double incbeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - incbeta(b, a, 1.0 - x);
    const double lbeta_ab = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
    const double front = std::exp(std::log(x) * a + std::log1p(-x) * b - lbeta_ab) / a;
    constexpr double kTiny = 1e-30;
    double f = 1.0, c = 1.0, d = 0.0;
    for (int i = 0; i <= 500; ++i) {
        const int m = i / 2;
        double numerator;
        if (i == 0)
            numerator = 1.0;
        else if (i % 2 == 0)
            numerator = (m * (b - m) * x) / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        else
            numerator = -((a + m) * (a + b + m) * x) / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 + numerator * d;
        if (std::abs(d) < kTiny) d = kTiny;
        d = 1.0 / d;
        c = 1.0 + numerator / c;
        if (std::abs(c) < kTiny) c = kTiny;
        const double cd = c * d;
        f *= cd;
        if (std::abs(1.0 - cd) < 1e-12) return front * (f - 1.0);
    }
    return front * (f - 1.0);
}

double student_t_two_sided_p(double t, double df) {
    if (df <= 0) throw InputError("student_t_two_sided_p: df must be positive");
    const double x = df / (df + t * t);
    return incbeta(df / 2.0, 0.5, x);
}

double student_t_quantile(double p, double df) {
    if (!(p > 0.0 && p < 1.0)) throw InputError("student_t_quantile: p must be in (0,1)");
    if (p == 0.5) return 0.0;
    const bool upper = p > 0.5;
    const double target = upper ? p : 1.0 - p;
    auto cdf = [df](double t) { return 1.0 - 0.5 * student_t_two_sided_p(t, df); };
    double hi = 1.0;
    while (cdf(hi) < target && hi < 1e12) hi *= 2.0;
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (cdf(mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    const double q = 0.5 * (lo + hi);
    return upper ? q : -q;
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

ConfusionCounts confusion_from_labels(const std::vector<int>& actual,
                                      const std::vector<int>& predicted, int num_classes) {
    if (actual.size() != predicted.size()) throw InputError("confusion_from_labels: length mismatch");
    ConfusionCounts c;
    c.tp.assign(static_cast<size_t>(num_classes), 0);
    c.fp.assign(static_cast<size_t>(num_classes), 0);
    c.fn.assign(static_cast<size_t>(num_classes), 0);
    for (size_t i = 0; i < actual.size(); ++i) {
        const int a = actual[i], p = predicted[i];
        if (a < 0 || a >= num_classes || p < 0 || p >= num_classes)
            throw InputError("confusion_from_labels: label out of range");
        if (a == p) {
            ++c.tp[static_cast<size_t>(a)];
        } else {
            ++c.fp[static_cast<size_t>(p)];
            ++c.fn[static_cast<size_t>(a)];
        }
    }
    return c;
}

PRFResult precision_recall_f1(const ConfusionCounts& c) {
    PRFResult r;
    const size_t k = c.tp.size();
    r.per_class.resize(k);
    for (size_t i = 0; i < k; ++i) {
        const double tp = static_cast<double>(c.tp[i]);
        const double fp = static_cast<double>(c.fp[i]);
        const double fn = static_cast<double>(c.fn[i]);
        ClassPRF& m = r.per_class[i];
        m.precision = (tp + fp > 0) ? tp / (tp + fp) : 0.0;
        m.recall = (tp + fn > 0) ? tp / (tp + fn) : 0.0;
        m.f1 = (m.precision + m.recall > 0) ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        r.macro.precision += m.precision;
        r.macro.recall += m.recall;
        r.macro.f1 += m.f1;
    }
    if (k > 0) {
        r.macro.precision /= static_cast<double>(k);
        r.macro.recall /= static_cast<double>(k);
        r.macro.f1 /= static_cast<double>(k);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Quantiles
// ---------------------------------------------------------------------------

double quantile(std::vector<double> xs, double p) {
    if (xs.empty()) throw InputError("quantile: empty input");
    if (p < 0.0 || p > 1.0) throw InputError("quantile: p out of [0,1]");
    std::sort(xs.begin(), xs.end());
    const double h = (static_cast<double>(xs.size()) - 1.0) * p;
    const size_t lo = static_cast<size_t>(std::floor(h));
    const double frac = h - static_cast<double>(lo);
    if (lo + 1 >= xs.size()) return xs.back();
    return xs[lo] + frac * (xs[lo + 1] - xs[lo]);
}

TertileResult tertile_recode(const std::vector<double>& scores) {
    if (scores.size() < 3) throw InputError("tertile_recode: need at least 3 values");
    TertileResult r;
    r.q1 = quantile(scores, 1.0 / 3.0);
    r.q2 = quantile(scores, 2.0 / 3.0);
    r.labels.reserve(scores.size());
    for (double x : scores) {
        if (x <= r.q1)
            r.labels.push_back(0);
        else if (x <= r.q2)
            r.labels.push_back(1);
        else
            r.labels.push_back(2);
    }
    return r;
}

DistSummary distribution_summary(const std::vector<double>& xs) {
    if (xs.empty()) throw InputError("distribution_summary: empty input");
    DistSummary s;
    s.median = quantile(xs, 0.5);
    s.q1 = quantile(xs, 0.25);
    s.q3 = quantile(xs, 0.75);
    s.iqr = s.q3 - s.q1;
    return s;
}

// ---------------------------------------------------------------------------
// Shapiro-Wilk (Royston 1995, AS R94)
// ---------------------------------------------------------------------------

namespace {
double poly_eval(const double* c, int n, double x) {
    double v = c[0];
    double xi = 1.0;
    for (int i = 1; i < n; ++i) {
        xi *= x;
        v += c[i] * xi;
    }
    return v;
}
}  // namespace

ShapiroResult shapiro_wilk(const std::vector<double>& xs) {
    const int n = static_cast<int>(xs.size());
    if (n < 3 || n > 5000) throw InputError("shapiro_wilk: N must be in [3, 5000]");
    std::vector<double> x(xs);
    std::sort(x.begin(), x.end());
    if (x.back() - x.front() <= 0.0) throw InputError("shapiro_wilk: zero variance");

    static const double c1[6] = {0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056};
    static const double c2[6] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
    static const double c3[4] = {0.5440, -0.39978, 0.025054, -0.0006714};
    static const double c4[4] = {1.3822, -0.77857, 0.062767, -0.0020322};
    static const double c5[4] = {-1.5861, -0.31082, -0.083751, 0.0038915};
    static const double c6[3] = {-0.4803, -0.082676, 0.0030302};
    static const double gpoly[2] = {-2.273, 0.459};

    const int n2 = n / 2;
    std::vector<double> a(static_cast<size_t>(n2));
    const double an = static_cast<double>(n);
    if (n == 3) {
        a[0] = 0.70710678118654752;
    } else {
        // Expected normal order statistics for the lower half (negative).
        double summ2 = 0.0;
        std::vector<double> m(static_cast<size_t>(n2));
        for (int i = 1; i <= n2; ++i) {
            m[static_cast<size_t>(i - 1)] = normal_ppf((i - 0.375) / (an + 0.25));
            summ2 += m[static_cast<size_t>(i - 1)] * m[static_cast<size_t>(i - 1)];
        }
        summ2 *= 2.0;
        const double ssumm2 = std::sqrt(summ2);
        const double rsn = 1.0 / std::sqrt(an);
        const double a1 = poly_eval(c1, 6, rsn) - m[0] / ssumm2;
        int i1;
        double fac;
        if (n > 5) {
            i1 = 3;
            const double a2 = -m[1] / ssumm2 + poly_eval(c2, 6, rsn);
            fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) /
                            (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
            a[1] = a2;
        } else {
            i1 = 2;
            fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
        }
        a[0] = a1;
        for (int i = i1; i <= n2; ++i) a[static_cast<size_t>(i - 1)] = -m[static_cast<size_t>(i - 1)] / fac;
    }

    double mean = std::accumulate(x.begin(), x.end(), 0.0) / an;
    double ssq = 0.0;
    for (double v : x) ssq += (v - mean) * (v - mean);
    double sax = 0.0;
    for (int i = 0; i < n2; ++i) sax += a[static_cast<size_t>(i)] * (x[static_cast<size_t>(n - 1 - i)] - x[static_cast<size_t>(i)]);
    double w = sax * sax / ssq;
    if (w > 1.0) w = 1.0;

    ShapiroResult res;
    res.w = w;
    if (n == 3) {
        const double pi6 = 1.90985931710274;
        const double stqr = 1.04719755119660;
        double pw = pi6 * (std::asin(std::sqrt(w)) - stqr);
        res.p = std::clamp(pw, 0.0, 1.0);
        return res;
    }
    double y = std::log1p(-w);
    double mu, sigma;
    if (n <= 11) {
        const double gamma = poly_eval(gpoly, 2, an);
        if (y >= gamma) {
            res.p = 1e-19;
            return res;
        }
        y = -std::log(gamma - y);
        mu = poly_eval(c3, 4, an);
        sigma = std::exp(poly_eval(c4, 4, an));
    } else {
        const double ln_n = std::log(an);
        mu = poly_eval(c5, 4, ln_n);
        sigma = std::exp(poly_eval(c6, 3, ln_n));
    }
    res.p = 1.0 - normal_cdf((y - mu) / sigma);
    return res;
}

// ---------------------------------------------------------------------------
// Agreement
// ---------------------------------------------------------------------------

BlandAltmanResult bland_altman(const std::vector<double>& model_scores,
                               const std::vector<double>& human_scores) {
    if (model_scores.size() != human_scores.size()) throw InputError("bland_altman: length mismatch");
    const size_t n = model_scores.size();
    if (n < 2) throw InputError("bland_altman: need N >= 2");
    std::vector<double> d(n);
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(model_scores[i]) || !std::isfinite(human_scores[i]))
            throw InputError("bland_altman: non-finite input");
        d[i] = model_scores[i] - human_scores[i];
    }
    BlandAltmanResult r;
    r.bias = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : d) ss += (v - r.bias) * (v - r.bias);
    r.sd = std::sqrt(ss / static_cast<double>(n - 1));
    r.loa_lower = r.bias - 1.96 * r.sd;
    r.loa_upper = r.bias + 1.96 * r.sd;
    for (size_t i = 0; i < n; ++i)
        if (d[i] < r.loa_lower || d[i] > r.loa_upper) r.outlier_indices.push_back(static_cast<int>(i));
    return r;
}

double agreement_rate(const std::vector<double>& a, const std::vector<double>& b,
                      AgreementMode mode, double tol) {
    if (a.size() != b.size()) throw InputError("agreement_rate: length mismatch");
    if (a.empty()) return 0.0;
    size_t hits = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        if (mode == AgreementMode::exact ? (a[i] == b[i]) : (std::abs(a[i] - b[i]) <= tol)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Regression (Householder QR)
// ---------------------------------------------------------------------------

namespace {

// In-place QR of A (n x k, n >= k): R overwrites the upper triangle, the
// Householder vectors live below it; y is transformed alongside.
void householder_qr(std::vector<double>& A, long n, long k, std::vector<double>& y,
                    const std::vector<std::string>& names) {
    for (long j = 0; j < k; ++j) {
        double norm = 0.0;
        for (long i = j; i < n; ++i) norm += A[static_cast<size_t>(i) * k + j] * A[static_cast<size_t>(i) * k + j];
        norm = std::sqrt(norm);
        const double ajj = A[static_cast<size_t>(j) * k + j];
        const double alpha = (ajj >= 0) ? -norm : norm;
        const double vjj = ajj - alpha;
        double vnorm2 = vjj * vjj;
        for (long i = j + 1; i < n; ++i) vnorm2 += A[static_cast<size_t>(i) * k + j] * A[static_cast<size_t>(i) * k + j];
        if (vnorm2 < 1e-300) {
            A[static_cast<size_t>(j) * k + j] = alpha;
            continue;
        }
        // Apply H = I - 2 v v^T / (v^T v) to remaining columns and y.
        for (long c = j + 1; c < k; ++c) {
            double dot = vjj * A[static_cast<size_t>(j) * k + c];
            for (long i = j + 1; i < n; ++i) dot += A[static_cast<size_t>(i) * k + j] * A[static_cast<size_t>(i) * k + c];
            const double f = 2.0 * dot / vnorm2;
            A[static_cast<size_t>(j) * k + c] -= f * vjj;
            for (long i = j + 1; i < n; ++i) A[static_cast<size_t>(i) * k + c] -= f * A[static_cast<size_t>(i) * k + j];
        }
        {
            double dot = vjj * y[static_cast<size_t>(j)];
            for (long i = j + 1; i < n; ++i) dot += A[static_cast<size_t>(i) * k + j] * y[static_cast<size_t>(i)];
            const double f = 2.0 * dot / vnorm2;
            y[static_cast<size_t>(j)] -= f * vjj;
            for (long i = j + 1; i < n; ++i) y[static_cast<size_t>(i)] -= f * A[static_cast<size_t>(i) * k + j];
        }
        A[static_cast<size_t>(j) * k + j] = alpha;
    }
    // Rank check on the diagonal of R.
    double dmax = 0.0;
    for (long j = 0; j < k; ++j) dmax = std::max(dmax, std::abs(A[static_cast<size_t>(j) * k + j]));
    for (long j = 0; j < k; ++j) {
        if (std::abs(A[static_cast<size_t>(j) * k + j]) <= 1e-10 * std::max(dmax, 1e-300)) {
            const std::string col = (static_cast<size_t>(j) < names.size()) ? names[static_cast<size_t>(j)]
                                                                            : ("column " + std::to_string(j));
            throw InputError("ols_fit: design matrix is rank deficient at " + col);
        }
    }
}

}  // namespace

OlsResult ols_fit(const std::vector<double>& x, long n, long k, const std::vector<double>& y,
                  bool add_intercept, const std::vector<std::string>& names) {
    if (n <= 0 || k < 0) throw InputError("ols_fit: bad dimensions");
    if (static_cast<long>(x.size()) != n * k) throw InputError("ols_fit: x size != n*k");
    if (static_cast<long>(y.size()) != n) throw InputError("ols_fit: y size != n");
    const long kk = add_intercept ? k + 1 : k;
    if (kk == 0) throw InputError("ols_fit: no predictors");
    if (n <= kk) throw InputError("ols_fit: need N > number of coefficients");

    OlsResult r;
    r.n = n;
    r.df = n - kk;
    r.names.reserve(static_cast<size_t>(kk));
    if (add_intercept) r.names.push_back("intercept");
    for (long j = 0; j < k; ++j)
        r.names.push_back(static_cast<size_t>(j) < names.size() ? names[static_cast<size_t>(j)]
                                                                : ("x" + std::to_string(j + 1)));

    std::vector<double> A(static_cast<size_t>(n) * kk);
    for (long i = 0; i < n; ++i) {
        long c = 0;
        if (add_intercept) A[static_cast<size_t>(i) * kk + c++] = 1.0;
        for (long j = 0; j < k; ++j) A[static_cast<size_t>(i) * kk + c + j] = x[static_cast<size_t>(i) * k + j];
    }
    std::vector<double> qty(y);
    householder_qr(A, n, kk, qty, r.names);

    // Back-substitute R beta = (Q^T y)[0:kk]
    std::vector<double> beta(static_cast<size_t>(kk));
    for (long j = kk - 1; j >= 0; --j) {
        double s = qty[static_cast<size_t>(j)];
        for (long c = j + 1; c < kk; ++c) s -= A[static_cast<size_t>(j) * kk + c] * beta[static_cast<size_t>(c)];
        beta[static_cast<size_t>(j)] = s / A[static_cast<size_t>(j) * kk + j];
    }

    // RSS = || tail of Q^T y ||^2
    double rss = 0.0;
    for (long i = kk; i < n; ++i) rss += qty[static_cast<size_t>(i)] * qty[static_cast<size_t>(i)];
    r.sigma2 = rss / static_cast<double>(r.df);

    // (X'X)^-1 = R^-1 R^-T; build R^-1 column by column.
    std::vector<double> rinv(static_cast<size_t>(kk) * kk, 0.0);
    for (long c = 0; c < kk; ++c) {
        std::vector<double> e(static_cast<size_t>(kk), 0.0);
        e[static_cast<size_t>(c)] = 1.0;
        for (long j = kk - 1; j >= 0; --j) {
            double s = e[static_cast<size_t>(j)];
            for (long q = j + 1; q < kk; ++q) s -= A[static_cast<size_t>(j) * kk + q] * rinv[static_cast<size_t>(q) * kk + c];
            rinv[static_cast<size_t>(j) * kk + c] = s / A[static_cast<size_t>(j) * kk + j];
        }
    }

    const double tcrit = student_t_quantile(0.975, static_cast<double>(r.df));
    r.beta = beta;
    r.se.resize(static_cast<size_t>(kk));
    r.t.resize(static_cast<size_t>(kk));
    r.p.resize(static_cast<size_t>(kk));
    r.ci_lower.resize(static_cast<size_t>(kk));
    r.ci_upper.resize(static_cast<size_t>(kk));
    for (long j = 0; j < kk; ++j) {
        double xtxinv_jj = 0.0;
        for (long c = j; c < kk; ++c) xtxinv_jj += rinv[static_cast<size_t>(j) * kk + c] * rinv[static_cast<size_t>(j) * kk + c];
        const double se = std::sqrt(r.sigma2 * xtxinv_jj);
        r.se[static_cast<size_t>(j)] = se;
        if (se > 0.0) {
            r.t[static_cast<size_t>(j)] = beta[static_cast<size_t>(j)] / se;
            r.p[static_cast<size_t>(j)] = student_t_two_sided_p(r.t[static_cast<size_t>(j)], static_cast<double>(r.df));
        } else {
            r.t[static_cast<size_t>(j)] = 0.0;
            r.p[static_cast<size_t>(j)] = (beta[static_cast<size_t>(j)] != 0.0) ? 0.0 : 1.0;
        }
        r.ci_lower[static_cast<size_t>(j)] = beta[static_cast<size_t>(j)] - tcrit * se;
        r.ci_upper[static_cast<size_t>(j)] = beta[static_cast<size_t>(j)] + tcrit * se;
    }

    const double ymean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    double tss = 0.0;
    for (double v : y) tss += (v - ymean) * (v - ymean);
    r.r2 = (tss > 0.0) ? 1.0 - rss / tss : 1.0;
    return r;
}

PolyFit poly_fit_r2(const std::vector<double>& x, const std::vector<double>& y, int degree) {
    if (x.size() != y.size()) throw InputError("poly_fit_r2: length mismatch");
    const long n = static_cast<long>(x.size());
    if (n <= degree + 1) throw InputError("poly_fit_r2: need N > degree + 1");
    std::vector<double> design(static_cast<size_t>(n) * degree);
    std::vector<std::string> names;
    for (int d = 1; d <= degree; ++d) names.push_back("x^" + std::to_string(d));
    for (long i = 0; i < n; ++i) {
        double p = 1.0;
        for (int d = 1; d <= degree; ++d) {
            p *= x[static_cast<size_t>(i)];
            design[static_cast<size_t>(i) * degree + (d - 1)] = p;
        }
    }
    OlsResult ols = ols_fit(design, n, degree, y, /*add_intercept=*/true, names);
    PolyFit f;
    f.coeffs = ols.beta;  // intercept first == ascending powers
    f.r2 = ols.r2;
    return f;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw InputError("pearson: length mismatch");
    const size_t n = a.size();
    if (n < 3) throw InputError("pearson: need N >= 3");
    double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(n);
    double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(n);
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) throw InputError("pearson: zero variance");
    return sab / std::sqrt(saa * sbb);
}

std::vector<double> midranks(const std::vector<double>& xs) {
    const size_t n = xs.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](size_t i, size_t j) { return xs[i] < xs[j]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t q = i; q <= j; ++q) ranks[idx[q]] = avg;
        i = j + 1;
    }
    return ranks;
}

CorrMatrix corr_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& columns,
                       CorrMethod method) {
    const size_t k = columns.size();
    if (k == 0) throw InputError("corr_matrix: no columns");
    const size_t n = columns[0].second.size();
    if (n < 3) throw InputError("corr_matrix: need N >= 3");
    std::vector<std::vector<double>> cols;
    cols.reserve(k);
    for (const auto& [name, c] : columns) {
        if (c.size() != n) throw InputError("corr_matrix: length mismatch in column " + name);
        const double mean = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(n);
        double var = 0.0;
        for (double v : c) var += (v - mean) * (v - mean);
        if (var <= 0.0) throw InputError("corr_matrix: zero variance in column " + name);
        cols.push_back(method == CorrMethod::spearman ? midranks(c) : c);
    }
    CorrMatrix out;
    out.names.reserve(k);
    for (const auto& [name, c] : columns) out.names.push_back(name);
    out.m.assign(k, std::vector<double>(k, 1.0));
    for (size_t i = 0; i < k; ++i)
        for (size_t j = i + 1; j < k; ++j) {
            const double rho = pearson(cols[i], cols[j]);
            out.m[i][j] = rho;
            out.m[j][i] = rho;
        }
    return out;
}

RangeCheck out_of_range_rate(const std::vector<double>& predictions,
                             const std::vector<std::pair<double, double>>& ranges) {
    if (ranges.size() != 1 && ranges.size() != predictions.size())
        throw InputError("out_of_range_rate: ranges must be global (1) or per item");
    for (const auto& [lo, hi] : ranges)
        if (lo > hi) throw InputError("out_of_range_rate: malformed interval (lo > hi)");
    RangeCheck r;
    if (predictions.empty()) return r;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const auto& [lo, hi] = ranges.size() == 1 ? ranges[0] : ranges[i];
        if (predictions[i] < lo || predictions[i] > hi) r.offending_indices.push_back(static_cast<int>(i));
    }
    r.rate = static_cast<double>(r.offending_indices.size()) / static_cast<double>(predictions.size());
    return r;
}

}  // namespace msef::stats
