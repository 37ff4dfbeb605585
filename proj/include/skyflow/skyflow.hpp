#pragma once

// Umbrella header for the dynamic sky-illumination pipeline.

#include "skyflow/common.hpp"
#include "skyflow/raster.hpp"
#include "skyflow/sky_image.hpp"
#include "skyflow/sphere.hpp"
#include "skyflow/flow_field.hpp"
#include "skyflow/farneback.hpp"
#include "skyflow/image_io.hpp"
#include "skyflow/noise.hpp"
#include "skyflow/tensor.hpp"
#include "skyflow/layers.hpp"
#include "skyflow/unet.hpp"
#include "skyflow/train.hpp"
#include "skyflow/temporal.hpp"
#include "skyflow/dataset.hpp"
#include "skyflow/metrics.hpp"
#include "skyflow/pipeline_config.hpp"
