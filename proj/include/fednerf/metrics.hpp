#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fednerf/net.hpp"
#include "fednerf/radiance.hpp"

namespace fednerf {

/// Reported instead of +inf for identical images.
inline constexpr double kPsnrCap = 99.0;

/// Mean squared error over every channel value.
double mse(const Image& a, const Image& b);
/// 10·log10(1/mse) for values in [0, 1], capped at kPsnrCap.
double psnr_from_mse(double mse);
double psnr(const Image& a, const Image& b);

/// Mean SSIM over all 8×8 windows (stride 1) of the ITU-R 601 luma, with a
/// uniform window and C1 = 0.01², C2 = 0.03². Images smaller than one window
/// use a single global window.
double ssim(const Image& a, const Image& b);

struct ViewScore {
  std::string view;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct EvalReport {
  std::string stage;  // init, base or fed
  std::vector<ViewScore> views;

  double mean_mse() const;
  double mean_psnr() const;
  double mean_ssim() const;
};

/// Renders every view with `model` and scores it against the stored pixels.
EvalReport evaluate(const NetworkParams& model, std::span<const PosedImage> views, const RenderConfig& cfg,
                    Task task, const std::string& stage);

/// Columns stage,view,mse,psnr,ssim; rows in report then view order.
std::string emit_csv(std::span<const EvalReport> reports);
void write_csv(const std::filesystem::path& path, std::span<const EvalReport> reports);
/// Inverse of emit_csv; reports keep their first-appearance order.
std::vector<EvalReport> parse_csv(const std::string& text);

}  // namespace fednerf
