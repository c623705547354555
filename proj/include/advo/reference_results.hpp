#pragma once

// Reference KITTI odometry errors for sequences 00-10, kept as comparison
// constants for long runs. t_rel in percent, r_rel in degrees per 100 m.
// Missing entries (tracking failures) are NaN.

#include <array>
#include <limits>

namespace advo::reference {

struct Row {
  double t_rel;
  double r_rel;
};

using Table = std::array<Row, 11>;

inline constexpr double kNa = std::numeric_limits<double>::quiet_NaN();

/// Adversarial pre-training then pose regression, L_beta.
inline constexpr Table kSemiSupervised = {{{10.54, 3.22}, {24.94, 3.54}, {18.28, 2.74},
                                          {8.96, 5.70},  {14.14, 3.24}, {7.01, 3.85},
                                          {7.87, 2.19},  {7.71, 3.79},  {9.04, 3.85},
                                          {10.49, 4.91}, {10.89, 5.03}}};

/// Pose regression only, no adversarial training.
inline constexpr Table kOnlyVo = {{{24.04, 4.84}, {26.34, 4.07}, {14.50, 3.89}, {7.68, 3.14},
                                  {14.81, 3.67}, {9.18, 2.51},  {11.26, 2.97}, {6.52, 3.74},
                                  {9.94, 3.59},  {13.65, 2.85}, {12.91, 5.54}}};

/// Adversarial and pose updates in the same step.
inline constexpr Table kSimultaneous = {{{12.03, 3.03}, {45.29, 3.21}, {32.70, 4.45},
                                        {10.89, 3.97}, {17.04, 2.54}, {9.22, 2.64},
                                        {30.16, 6.68}, {18.10, 4.78}, {15.14, 3.81},
                                        {36.46, 4.83}, {17.44, 6.64}}};

/// Semi-supervised training with the reprojection loss.
inline constexpr Table kReprojection = {{{11.01, 4.41}, {23.31, 3.27}, {16.11, 2.88},
                                        {9.68, 3.41},  {14.91, 3.71}, {7.18, 3.91},
                                        {7.56, 2.37},  {7.82, 3.74},  {9.41, 3.19},
                                        {10.5, 3.85},  {10.97, 5.41}}};

/// Feature-based monocular baseline (Sim(3)-aligned), no loop closure.
inline constexpr Table kFeatureMono = {{{23.01, 0.30}, {kNa, kNa}, {6.63, 0.24}, {1.12, 0.19},
                                       {0.70, 0.22},  {12.34, 0.22}, {17.71, 0.27},
                                       {11.10, 0.36}, {12.69, 0.30}, {kNa, kNa}, {3.90, 0.30}}};

/// Feature-based stereo baseline, no loop closure.
inline constexpr Table kFeatureStereo = {{{0.88, 0.30}, {1.39, 0.23}, {0.81, 0.28}, {0.73, 0.17},
                                         {0.48, 0.15}, {0.61, 0.25}, {0.76, 0.23}, {0.88, 0.47},
                                         {1.05, 0.32}, {0.83, 0.26}, {0.57, 0.26}}};

/// Reported average throughput on a desktop GPU.
inline constexpr double kGpuFramesPerSecond = 50.0;

}  // namespace advo::reference
