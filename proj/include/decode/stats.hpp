#pragma once

namespace decode {

// Regularized incomplete beta I_x(a, b) via Lentz continued fractions.
double regularized_incomplete_beta(double a, double b, double x);

// Two-sided p-value for a Student-t statistic with the given degrees of
// freedom: P(|T| >= |t|).
double student_t_two_sided_p(double t, double df);

// Exact two-sided sign-test p-value: X ~ Binomial(n, 1/2), observed k.
double binomial_sign_test_p(int k, int n);

double normal_cdf(double x);
double normal_pdf(double x);

}  // namespace decode
