#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msef/errors.hpp"

namespace msef::stats {

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

double normal_cdf(double z);
double normal_ppf(double p);  // AS 241 (Wichura) rational approximation

// Regularized incomplete beta I_x(a, b) via Lentz continued fraction.
// Precision target 1e-8 over the parameter ranges used here.
double incbeta(double a, double b, double x);

// Two-sided p-value and upper quantile for Student-t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);
double student_t_quantile(double p, double df);  // P(T <= result) = p

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

struct ConfusionCounts {
    // index = class label, one-vs-rest
    std::vector<long> tp, fp, fn;
};

ConfusionCounts confusion_from_labels(const std::vector<int>& actual,
                                      const std::vector<int>& predicted, int num_classes);

struct ClassPRF {
    double precision = 0, recall = 0, f1 = 0;
};

struct PRFResult {
    std::vector<ClassPRF> per_class;
    ClassPRF macro;  // unweighted class mean
};

// Zero denominators yield metric 0 by convention.
PRFResult precision_recall_f1(const ConfusionCounts& c);

// ---------------------------------------------------------------------------
// Quantiles and recoding (linear interpolation between order statistics)
// ---------------------------------------------------------------------------

double quantile(std::vector<double> xs, double p);

struct TertileResult {
    std::vector<int> labels;  // 0 if x <= q1, 1 if q1 < x <= q2, else 2
    double q1 = 0, q2 = 0;
};

TertileResult tertile_recode(const std::vector<double>& scores);

struct DistSummary {
    double median = 0, q1 = 0, q3 = 0, iqr = 0;
};

DistSummary distribution_summary(const std::vector<double>& xs);

// ---------------------------------------------------------------------------
// Normality / agreement
// ---------------------------------------------------------------------------

struct ShapiroResult {
    double w = 0, p = 0;
};

// Royston AS R94 approximation, 3 <= N <= 5000.
ShapiroResult shapiro_wilk(const std::vector<double>& xs);

struct BlandAltmanResult {
    double bias = 0;        // mean(model - human)
    double sd = 0;          // sample sd of differences
    double loa_lower = 0, loa_upper = 0;  // bias -/+ 1.96 sd
    std::vector<int> outlier_indices;     // differences outside the LoA
};

BlandAltmanResult bland_altman(const std::vector<double>& model_scores,
                               const std::vector<double>& human_scores);

enum class AgreementMode { exact, fuzzy };

double agreement_rate(const std::vector<double>& a, const std::vector<double>& b,
                      AgreementMode mode, double tol = 1.0);

// ---------------------------------------------------------------------------
// Regression
// ---------------------------------------------------------------------------

struct OlsResult {
    std::vector<std::string> names;
    std::vector<double> beta, se, t, p, ci_lower, ci_upper;
    double sigma2 = 0;  // residual variance RSS/(N-k)
    double r2 = 0;
    long n = 0;
    long df = 0;
};

// X row-major N x k. Betas via Householder QR; SE from sigma^2 (X'X)^-1.
OlsResult ols_fit(const std::vector<double>& x, long n, long k, const std::vector<double>& y,
                  bool add_intercept, const std::vector<std::string>& names = {});

struct PolyFit {
    std::vector<double> coeffs;  // ascending powers
    double r2 = 0;
};

PolyFit poly_fit_r2(const std::vector<double>& x, const std::vector<double>& y, int degree = 2);

enum class CorrMethod { pearson, spearman };

struct CorrMatrix {
    std::vector<std::string> names;
    std::vector<std::vector<double>> m;
};

CorrMatrix corr_matrix(const std::vector<std::pair<std::string, std::vector<double>>>& columns,
                       CorrMethod method);

double pearson(const std::vector<double>& a, const std::vector<double>& b);
std::vector<double> midranks(const std::vector<double>& xs);

// ---------------------------------------------------------------------------
// Range accounting
// ---------------------------------------------------------------------------

struct RangeCheck {
    double rate = 0;
    std::vector<int> offending_indices;
};

RangeCheck out_of_range_rate(const std::vector<double>& predictions,
                             const std::vector<std::pair<double, double>>& ranges);

}  // namespace msef::stats
