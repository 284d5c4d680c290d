// Deterministic feedback vs. dithered feedback on the scalar loop
// x' = 0.85 x + 0.6 u + e, u = -0.7 x + eps v.

#include <iostream>

#include "koopcert/koopcert.hpp"

int main() {
  using namespace koopcert;
  const SystemSpec sys = scalar_system();
  const DictionarySpec dict = build_dictionary(DictionaryKind::identity, 1);
  for (double eps : {0.0, 0.1, 1.0}) {
    const TransitionDataset data = simulate_scalar(sys, scalar_policy(-0.7, eps), 800, 0.0, 7);
    const LiftedRegressionData lifted = prepare(data, dict);
    const CertificateReport cert = certify(lifted);
    const EdmdcModel model = fit_ls(lifted);
    std::cout << "eps " << eps << ": c_reg " << cert.c_reg << ", c_int " << cert.c_int << ", b_hat "
              << model.raw_B()(0, 0) << " (true 0.6)\n";
    try {
      residualized_b(lifted);
    } catch (const NonIdentifiableError& e) {
      std::cout << "  " << e.what() << '\n';
    }
  }
}
