#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "stainqc/errors.hpp"
#include "stainqc/rng.hpp"
#include "stainqc/taxonomy.hpp"

using namespace stainqc;

TEST_CASE("class sets have the documented sizes and unique ids") {
  CHECK(fine_classes().size() == 16);
  std::set<std::string> ids;
  for (const auto& sc : fine_classes()) ids.insert(sc.id);
  CHECK(ids.size() == 16);

  CHECK(ClassSet::fine().size() == 16);
  CHECK(ClassSet::coarse().size() == 14);
  CHECK(ClassSet::fixation_binary().size() == 2);
  CHECK(ClassSet::external_tcga().size() == 3);
  CHECK(ClassSet::fixation_binary().classes() == std::vector<std::string>{"he_ffpe", "he_fs"});
  CHECK(ClassSet::external_tcga().classes() ==
        std::vector<std::string>{"he_ffpe", "he_fs", "other"});
}

TEST_CASE("coarse merge pairs collapse and everything else is identity") {
  const ClassSet& coarse = ClassSet::coarse();
  CHECK(project("alcian_blue", coarse) == project("alcian_blue_pas", coarse));
  CHECK(project("pas", coarse) == project("pas_d", coarse));
  CHECK(project("pas", coarse) != project("alcian_blue", coarse));
  for (const auto& sc : fine_classes()) {
    if (sc.id == "alcian_blue" || sc.id == "alcian_blue_pas" || sc.id == "pas" ||
        sc.id == "pas_d")
      continue;
    CHECK(project(sc.id, coarse) == sc.id);
  }
  // Surjective: every coarse id is hit by some fine id.
  std::set<int> hit(coarse.fine_projection().begin(), coarse.fine_projection().end());
  CHECK(static_cast<int>(hit.size()) == coarse.size());
}

TEST_CASE("project spec examples") {
  CHECK(project("pas_d", ClassSet::coarse()) == "pas_group");
  CHECK(project("he_ffpe", ClassSet::fine()) == "he_ffpe");
  CHECK(project("giemsa", ClassSet::external_tcga()) == "other");
  CHECK(project("he_fs", ClassSet::external_tcga()) == "he_fs");
  CHECK_THROWS_AS(project("toluidine_blue", ClassSet::fine()), InvalidLabelError);
  CHECK_THROWS_AS(project("giemsa", ClassSet::fixation_binary()), ProjectionError);
}

TEST_CASE("project_probs spec examples") {
  Eigen::VectorXd uniform = Eigen::VectorXd::Constant(16, 1.0 / 16);
  Eigen::VectorXd coarse = project_probs<double>(uniform, ClassSet::coarse());
  REQUIRE(coarse.size() == 14);
  const ClassSet& cs = ClassSet::coarse();
  for (int i = 0; i < 14; ++i) {
    const bool merged = cs.classes()[i] == "alcian_blue_group" || cs.classes()[i] == "pas_group";
    CHECK(coarse[i] == doctest::Approx(merged ? 2.0 / 16 : 1.0 / 16).epsilon(1e-12));
  }

  Eigen::VectorXd onehot = Eigen::VectorXd::Zero(16);
  onehot[ClassSet::fine().index_of("pas")] = 1.0;
  Eigen::VectorXd merged = project_probs<double>(onehot, cs);
  CHECK(merged[cs.index_of("pas_group")] == 1.0);
  CHECK(merged.sum() == doctest::Approx(1.0));

  Eigen::VectorXd ret = Eigen::VectorXd::Zero(16);
  ret[ClassSet::fine().index_of("reticulin")] = 1.0;
  Eigen::VectorXd ext = project_probs<double>(ret, ClassSet::external_tcga());
  CHECK(ext[ClassSet::external_tcga().index_of("other")] == 1.0);
}

TEST_CASE("project_probs validates its input") {
  Eigen::VectorXd short_vec = Eigen::VectorXd::Constant(14, 1.0 / 14);
  CHECK_THROWS_AS(project_probs<double>(short_vec, ClassSet::coarse()),
                  InvalidDistributionError);
  Eigen::VectorXd neg = Eigen::VectorXd::Constant(16, 1.0 / 16);
  neg[0] = -neg[0];
  CHECK_THROWS_AS(project_probs<double>(neg, ClassSet::coarse()),
                  InvalidDistributionError);
  Eigen::VectorXd off = Eigen::VectorXd::Constant(16, 1.0 / 16);
  off[0] += 1e-3;
  CHECK_THROWS_AS(project_probs<double>(off, ClassSet::coarse()),
                  InvalidDistributionError);
}

TEST_CASE("one-hot projection commutes with project for every fine label") {
  for (const ClassSet* set : {&ClassSet::fine(), &ClassSet::coarse(), &ClassSet::external_tcga()}) {
    for (const auto& sc : fine_classes()) {
      Eigen::VectorXd onehot = Eigen::VectorXd::Zero(16);
      onehot[ClassSet::fine().index_of(sc.id)] = 1.0;
      Eigen::VectorXd projected = project_probs<double>(onehot, *set);
      int argmax;
      projected.maxCoeff(&argmax);
      CHECK(set->classes()[argmax] == project(sc.id, *set));
      CHECK(projected[argmax] == 1.0);
    }
  }
}

TEST_CASE("merge-then-argmax oracle agrees on random vectors") {
  Rng rng(2024);
  const ClassSet& coarse = ClassSet::coarse();
  for (int trial = 0; trial < 500; ++trial) {
    Eigen::VectorXd p(16);
    for (int i = 0; i < 16; ++i) p[i] = rng.uniform();
    p /= p.sum();
    const Eigen::VectorXd merged = project_probs<double>(p, coarse);
    CHECK(merged.sum() == doctest::Approx(1.0).epsilon(1e-9));

    // Oracle: straight accumulation over the projection table.
    Eigen::VectorXd oracle = Eigen::VectorXd::Zero(14);
    for (int i = 0; i < 16; ++i) oracle[coarse.fine_projection()[i]] += p[i];
    int a, b;
    merged.maxCoeff(&a);
    oracle.maxCoeff(&b);
    CHECK(a == b);
    CHECK((merged - oracle).cwiseAbs().maxCoeff() < 1e-12);
  }
}
