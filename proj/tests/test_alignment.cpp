#include <cmath>

#include "doctest.h"
#include "memground/alignment.hpp"
#include "memground/errors.hpp"
#include "memground/grad_check.hpp"
#include "grad_suite.hpp"
#include "test_util.hpp"

using namespace memground;
using testutil::random_matrix;

namespace {

AlignmentParams with_maps(const Matrix& phi1, const Matrix& phi2, const Matrix& wv, const Matrix& wq) {
  return {Tensor::parameter(phi1), Tensor::parameter(phi2), Tensor::parameter(wv), Tensor::parameter(wq)};
}

AlignmentParams identity_params(Eigen::Index d) {
  const Matrix i = Matrix::Identity(d, d);
  return with_maps(i, i, i, i);
}

}  // namespace

TEST_CASE("adjacency of a single frame and word") {
  std::mt19937_64 g(1);
  const auto p = identity_params(3);
  const Adjacency a = cross_modal_adjacency(Tensor::constant(random_matrix(1, 3, g)),
                                            Tensor::constant(random_matrix(1, 3, g)), p);
  CHECK(a.frame_to_word.value()(0, 0) == 1.0);
  CHECK(a.word_to_frame.value()(0, 0) == 1.0);
}

TEST_CASE("zero similarities give uniform adjacency") {
  const auto p = identity_params(2);
  Matrix v(3, 2), q(4, 2);
  v << 1, 0, 2, 0, -1, 0;
  q << 0, 1, 0, 3, 0, -2, 0, 5;
  const Adjacency a = cross_modal_adjacency(Tensor::constant(v), Tensor::constant(q), p);
  CHECK((a.frame_to_word.value().array() - 0.25).abs().maxCoeff() < 1e-15);
  CHECK((a.word_to_frame.value().array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("2x2 similarity with identity maps") {
  const auto p = identity_params(2);
  Matrix v(2, 2), q(2, 2);
  v << std::log(2.0), 0, 0, std::log(2.0);
  q = Matrix::Identity(2, 2);
  const Adjacency a = cross_modal_adjacency(Tensor::constant(v), Tensor::constant(q), p);
  const Matrix& a1 = a.frame_to_word.value();
  CHECK(a1(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(a1(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(a1(1, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(a1(1, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("A2 is the softmax of the transposed similarity") {
  std::mt19937_64 g(2);
  const auto p = with_maps(random_matrix(4, 4, g), random_matrix(4, 4, g), random_matrix(4, 4, g),
                           random_matrix(4, 4, g));
  const Matrix v = random_matrix(3, 4, g), q = random_matrix(5, 4, g);
  const Adjacency a = cross_modal_adjacency(Tensor::constant(v), Tensor::constant(q), p);
  const Matrix s = (v * p.phi_video.value()) * (q * p.phi_query.value()).transpose();
  for (Eigen::Index n = 0; n < 5; ++n) {
    long double denom = 0.0L;
    for (Eigen::Index t = 0; t < 3; ++t) denom += std::exp(static_cast<long double>(s(t, n)));
    for (Eigen::Index t = 0; t < 3; ++t) {
      CHECK(std::abs(static_cast<long double>(a.word_to_frame.value()(n, t)) -
                     std::exp(static_cast<long double>(s(t, n))) / denom) < 1e-14L);
    }
  }
}

TEST_CASE("align selection and averaging cases") {
  std::mt19937_64 g(3);
  const auto p = identity_params(4);
  const Matrix v = random_matrix(3, 4, g), q = random_matrix(2, 4, g);
  Adjacency onehot;
  Matrix a2 = Matrix::Zero(2, 3);
  a2(0, 2) = 1.0;
  a2(1, 0) = 1.0;
  onehot.word_to_frame = Tensor::constant(a2);
  onehot.frame_to_word = Tensor::constant(Matrix::Constant(3, 2, 0.5));
  const Aligned sel = align(Tensor::constant(v), Tensor::constant(q), onehot, p);
  CHECK(testutil::bit_equal(sel.video_per_word.value().row(0), v.row(2)));
  CHECK(testutil::bit_equal(sel.video_per_word.value().row(1), v.row(0)));

  Adjacency uniform;
  uniform.word_to_frame = Tensor::constant(Matrix::Constant(2, 3, 1.0 / 3.0));
  uniform.frame_to_word = Tensor::constant(Matrix::Constant(3, 2, 0.5));
  const Aligned avg = align(Tensor::constant(v), Tensor::constant(q), uniform, p);
  const Eigen::RowVectorXd mean = v.colwise().mean();
  for (Eigen::Index n = 0; n < 2; ++n) {
    CHECK((avg.video_per_word.value().row(n) - mean).cwiseAbs().maxCoeff() < 1e-15);
  }
}

TEST_CASE("align matches the triple product oracle") {
  std::mt19937_64 g(4);
  const auto p = with_maps(random_matrix(4, 4, g), random_matrix(4, 4, g), random_matrix(4, 4, g),
                           random_matrix(4, 4, g));
  const Matrix v = random_matrix(3, 4, g), q = random_matrix(2, 4, g);
  const Tensor vt = Tensor::constant(v), qt = Tensor::constant(q);
  const Adjacency a = cross_modal_adjacency(vt, qt, p);
  const Aligned al = align(vt, qt, a, p);
  CHECK(al.video_per_word.rows() == 2);
  CHECK(al.query_per_frame.rows() == 3);
  const Matrix& a1 = a.frame_to_word.value();
  const Matrix& a2 = a.word_to_frame.value();
  const Matrix& wv = p.w_video.value();
  const Matrix& wq = p.w_query.value();
  for (Eigen::Index n = 0; n < 2; ++n) {
    for (Eigen::Index d = 0; d < 4; ++d) {
      long double ref = 0.0L;
      for (Eigen::Index t = 0; t < 3; ++t) {
        for (Eigen::Index k = 0; k < 4; ++k) ref += static_cast<long double>(a2(n, t)) * v(t, k) * wv(k, d);
      }
      CHECK(std::abs(static_cast<long double>(al.video_per_word.value()(n, d)) - ref) < 1e-13L);
    }
  }
  for (Eigen::Index t = 0; t < 3; ++t) {
    for (Eigen::Index d = 0; d < 4; ++d) {
      long double ref = 0.0L;
      for (Eigen::Index n = 0; n < 2; ++n) {
        for (Eigen::Index k = 0; k < 4; ++k) ref += static_cast<long double>(a1(t, n)) * q(n, k) * wq(k, d);
      }
      CHECK(std::abs(static_cast<long double>(al.query_per_frame.value()(t, d)) - ref) < 1e-13L);
    }
  }
}

TEST_CASE("aligned rows stay in the convex hull with identity weights") {
  std::mt19937_64 g(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = with_maps(random_matrix(3, 3, g), random_matrix(3, 3, g), Matrix::Identity(3, 3),
                             Matrix::Identity(3, 3));
    const Matrix v = random_matrix(4, 3, g), q = random_matrix(3, 3, g);
    const Tensor vt = Tensor::constant(v), qt = Tensor::constant(q);
    const Aligned al = align(vt, qt, cross_modal_adjacency(vt, qt, p), p);
    const Matrix& vh = al.video_per_word.value();
    const Matrix& qh = al.query_per_frame.value();
    for (Eigen::Index d = 0; d < 3; ++d) {
      CHECK(vh.col(d).minCoeff() >= v.col(d).minCoeff() - 1e-12);
      CHECK(vh.col(d).maxCoeff() <= v.col(d).maxCoeff() + 1e-12);
      CHECK(qh.col(d).minCoeff() >= q.col(d).minCoeff() - 1e-12);
      CHECK(qh.col(d).maxCoeff() <= q.col(d).maxCoeff() + 1e-12);
    }
  }
}

TEST_CASE("alignment shape errors") {
  const auto p = identity_params(3);
  CHECK_THROWS_AS(cross_modal_adjacency(Tensor::zeros(2, 3), Tensor::zeros(2, 4), p), DimensionError);
  Adjacency wrong{Tensor::zeros(2, 2), Tensor::zeros(2, 2)};
  CHECK_THROWS_AS(align(Tensor::zeros(3, 3), Tensor::zeros(2, 3), wrong, p), DimensionError);
}

TEST_CASE("grad_check through adjacency and align") {
  for (const auto& c : gradsuite::gradient_cases("alignment")) {
    CAPTURE(c.name);
    CHECK(c.run() <= gradsuite::kTolerance);
  }
}
