// Minimal tour: perturb a random pair joint, compare the plain next-token
// sampler's stationary error with the resampling chain's, and check both
// against their analytic bounds.

#include <iostream>

#include "rpt/rpt.hpp"

int main() {
  using namespace rpt;

  int vocab = 8;
  Rng rng(20260816);

  std::vector<double> w(static_cast<std::size_t>(vocab) * vocab);
  for (double& x : w) x = rng.unit();
  Distribution flat = normalize(w);
  JointMatrix joint(vocab, std::vector<double>(flat.values().begin(), flat.values().end()));

  PerturbationBundle bundle = make_perturbation_bundle(joint, 0.5, 0.5, rng);

  NtpJointError ntp = ntp_joint_error(bundle);
  double ntp_tv = 0.5 * l1_norm(ntp.exact_error);

  TransitionKernel truth_kernel = build_rpt_kernel(bundle.prev_given_next, bundle.next_given_prev);
  double kappa = condition_number(truth_kernel);

  TransitionKernel hat_kernel = build_rpt_kernel(bundle.hat_prev_given_next, bundle.hat_next_given_prev);
  JointMatrix stationary = stationary_distribution(hat_kernel, JointMatrix(vocab, ntp.hat_joint));
  double rpt_tv = 0.5 * l1_norm(ErrorTable::between(stationary, bundle.ground_truth));

  std::cout << "next-token joint error (tv):  " << ntp_tv << "  bound " << ntp_error_bound(bundle) << "\n";
  std::cout << "resampled stationary error:   " << rpt_tv << "  bound " << rpt_error_bound(bundle, kappa) << "\n";
  std::cout << "kernel condition number:      " << kappa << "\n";
  std::cout << "bound ratio (rpt / ntp):      " << rpt_factor(bundle, kappa) << "\n";
  return 0;
}
