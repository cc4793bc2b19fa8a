#include "fednerf/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fednerf {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Matrix: data length does not match shape");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

double Matrix::frobenius_norm() const {
  double acc = 0.0;
  for (double x : data_) acc += x * x;
  return std::sqrt(acc);
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matrix product: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto src = b.row(k);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

namespace {

Matrix elementwise(const Matrix& a, const Matrix& b, double sign) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("matrix sum: shapes differ");
  }
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += sign * b.data()[i];
  return out;
}

}  // namespace

Matrix operator-(const Matrix& a, const Matrix& b) { return elementwise(a, b, -1.0); }
Matrix operator+(const Matrix& a, const Matrix& b) { return elementwise(a, b, 1.0); }

void require_finite(const Matrix& m, const std::string& what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        std::ostringstream msg;
        msg << what << ": non-finite entry " << m(r, c) << " at (" << r << ", " << c << ")";
        throw std::invalid_argument(msg.str());
      }
    }
  }
}

namespace {

constexpr int kMaxSweeps = 80;
constexpr double kOrthoTol = 1e-15;

// Jacobi on a tall matrix (m >= n). `cols` holds the n columns of A as rows,
// each of length m. Returns the thin SVD.
SvdResult jacobi_tall(std::vector<std::vector<double>> cols, std::size_t m) {
  const std::size_t n = cols.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        auto& cp = cols[p];
        auto& cq = cols[q];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (gamma == 0.0 || std::fabs(gamma) <= kOrthoTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double xp = cp[i], xq = cq[i];
          cp[i] = c * xp - s * xq;
          cq[i] = s * xp + c * xq;
        }
        auto& vp = v[p];
        auto& vq = v[q];
        for (std::size_t i = 0; i < n; ++i) {
          const double xp = vp[i], xq = vq[i];
          vp[i] = c * xp - s * xq;
          vq[i] = s * xp + c * xq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (double x : cols[j]) acc += x * x;
    norms[j] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  SvdResult out;
  out.left = Matrix(m, n);
  out.right = Matrix(n, n);
  out.singular.resize(n);
  const double smax = n > 0 ? norms[order[0]] : 0.0;
  std::vector<bool> needs_completion(n, false);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.singular[j] = norms[src];
    for (std::size_t i = 0; i < n; ++i) out.right(i, j) = v[src][i];
    if (norms[src] <= 1e-12 * smax || norms[src] == 0.0) {
      needs_completion[j] = true;
      continue;
    }
    for (std::size_t i = 0; i < m; ++i) out.left(i, j) = cols[src][i] / norms[src];
  }

  // Left vectors for (numerically) zero singular values: Gram-Schmidt over
  // the standard basis against every column already fixed.
  std::vector<std::size_t> fixed;
  for (std::size_t j = 0; j < n; ++j)
    if (!needs_completion[j]) fixed.push_back(j);
  for (std::size_t j = 0; j < n; ++j) {
    if (!needs_completion[j]) continue;
    for (std::size_t e = 0; e < m; ++e) {
      std::vector<double> cand(m, 0.0);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t f : fixed) {
          double dot = 0.0;
          for (std::size_t i = 0; i < m; ++i) dot += cand[i] * out.left(i, f);
          for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * out.left(i, f);
        }
      }
      double nrm = 0.0;
      for (double x : cand) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 0.5) {
        for (std::size_t i = 0; i < m; ++i) out.left(i, j) = cand[i] / nrm;
        fixed.push_back(j);
        break;
      }
    }
  }
  return out;
}

void apply_sign_convention(SvdResult& r) {
  for (std::size_t j = 0; j < r.left.cols(); ++j) {
    std::size_t best = 0;
    double best_mag = -1.0;
    for (std::size_t i = 0; i < r.left.rows(); ++i) {
      const double mag = std::fabs(r.left(i, j));
      if (mag > best_mag) {
        best_mag = mag;
        best = i;
      }
    }
    if (r.left(best, j) < 0.0) {
      for (std::size_t i = 0; i < r.left.rows(); ++i) r.left(i, j) = -r.left(i, j);
      for (std::size_t i = 0; i < r.right.rows(); ++i) r.right(i, j) = -r.right(i, j);
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& w) {
  if (w.rows() == 0 || w.cols() == 0) throw std::invalid_argument("svd: empty matrix");
  require_finite(w, "svd");
  const bool tall = w.rows() >= w.cols();
  const Matrix& a = w;
  const std::size_t m = tall ? a.rows() : a.cols();
  const std::size_t n = tall ? a.cols() : a.rows();
  std::vector<std::vector<double>> cols(n, std::vector<double>(m));
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
      if (tall) cols[c][r] = a(r, c);
      else cols[r][c] = a(r, c);
    }
  }
  SvdResult out = jacobi_tall(std::move(cols), m);
  if (!tall) std::swap(out.left, out.right);
  apply_sign_convention(out);
  return out;
}

std::size_t select_rank(std::span<const double> singular, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("select_rank: alpha must be in (0, 1]");
  if (singular.empty()) throw std::invalid_argument("select_rank: empty spectrum");
  double total = 0.0;
  for (std::size_t i = 0; i < singular.size(); ++i) {
    const double s = singular[i];
    if (!std::isfinite(s) || s < 0.0) throw std::invalid_argument("select_rank: singular values must be finite and >= 0");
    if (i > 0 && s > singular[i - 1]) throw std::invalid_argument("select_rank: singular values must be non-increasing");
    total += s;
  }
  if (total <= 0.0) throw std::invalid_argument("select_rank: all-zero spectrum (degenerate layer)");
  // Rounding in the running sum could otherwise stop short of the full rank.
  if (alpha == 1.0) return singular.size();
  double cum = 0.0;
  for (std::size_t r = 0; r < singular.size(); ++r) {
    cum += singular[r];
    if (cum / total >= alpha) return r + 1;
  }
  return singular.size();
}

LowRankFactors truncate(const SvdResult& d, std::size_t rank) {
  const std::size_t k = d.singular.size();
  if (rank < 1 || rank > k) throw std::invalid_argument("truncate: rank out of range");
  const std::size_t u = d.left.rows();
  const std::size_t v = d.right.rows();
  LowRankFactors f{Matrix(u, rank), Matrix(rank, v)};
  for (std::size_t i = 0; i < u; ++i)
    for (std::size_t j = 0; j < rank; ++j) f.left(i, j) = d.left(i, j) * d.singular[j];
  for (std::size_t j = 0; j < rank; ++j)
    for (std::size_t c = 0; c < v; ++c) f.right(j, c) = d.right(c, j);
  return f;
}

Matrix refactor_lstsq(const Matrix& merged, const Matrix& right) {
  const std::size_t r = right.rows();
  const std::size_t v = right.cols();
  const std::size_t u = merged.rows();
  if (merged.cols() != v) throw std::invalid_argument("refactor_lstsq: column counts differ");
  if (r == 0 || r > v) throw std::invalid_argument("refactor_lstsq: frozen factor is rank-deficient (rows > cols)");

  // A = rightᵀ (v×r), B = mergedᵀ (v×u); stored as column lists.
  std::vector<std::vector<double>> a(r, std::vector<double>(v));
  for (std::size_t j = 0; j < r; ++j)
    for (std::size_t i = 0; i < v; ++i) a[j][i] = right(j, i);
  std::vector<std::vector<double>> b(u, std::vector<double>(v));
  for (std::size_t j = 0; j < u; ++j)
    for (std::size_t i = 0; i < v; ++i) b[j][i] = merged(j, i);

  std::vector<double> diag(r);
  double col_scale = 0.0;
  for (const auto& col : a) {
    double acc = 0.0;
    for (double x : col) acc += x * x;
    col_scale = std::max(col_scale, std::sqrt(acc));
  }
  for (std::size_t k = 0; k < r; ++k) {
    auto& ak = a[k];
    double norm = 0.0;
    for (std::size_t i = k; i < v; ++i) norm += ak[i] * ak[i];
    norm = std::sqrt(norm);
    if (norm <= 1e-12 * col_scale) {
      std::ostringstream msg;
      msg << "refactor_lstsq: frozen factor is rank-deficient (pivot " << k << " of " << r << ")";
      throw std::invalid_argument(msg.str());
    }
    const double alpha = ak[k] > 0.0 ? -norm : norm;
    std::vector<double> h(v - k);
    for (std::size_t i = k; i < v; ++i) h[i - k] = ak[i];
    h[0] -= alpha;
    double hh = 0.0;
    for (double x : h) hh += x * x;
    auto reflect = [&](std::vector<double>& col) {
      double dot = 0.0;
      for (std::size_t i = k; i < v; ++i) dot += h[i - k] * col[i];
      const double f = 2.0 * dot / hh;
      for (std::size_t i = k; i < v; ++i) col[i] -= f * h[i - k];
    };
    if (hh > 0.0) {
      for (std::size_t j = k; j < r; ++j) reflect(a[j]);
      for (auto& col : b) reflect(col);
    }
    diag[k] = a[k][k];
  }

  Matrix out(u, r);
  for (std::size_t j = 0; j < u; ++j) {
    const auto& rhs = b[j];
    for (std::size_t k = r; k-- > 0;) {
      double acc = rhs[k];
      for (std::size_t c = k + 1; c < r; ++c) acc -= a[c][k] * out(j, c);
      out(j, k) = acc / diag[k];
    }
  }
  return out;
}

}  // namespace fednerf
