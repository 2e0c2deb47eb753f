#pragma once

#include "lidarvo/backend.hpp"
#include "lidarvo/dataset.hpp"
#include "lidarvo/error.hpp"
#include "lidarvo/frame2frame.hpp"
#include "lidarvo/geometry.hpp"
#include "lidarvo/image.hpp"
#include "lidarvo/io/cloud.hpp"
#include "lidarvo/io/config.hpp"
#include "lidarvo/io/image.hpp"
#include "lidarvo/io/kitti.hpp"
#include "lidarvo/io/trajectory.hpp"
#include "lidarvo/metric.hpp"
#include "lidarvo/nlls/cost.hpp"
#include "lidarvo/nlls/loss.hpp"
#include "lidarvo/nlls/problem.hpp"
#include "lidarvo/nlls/solver.hpp"
#include "lidarvo/pipeline.hpp"
#include "lidarvo/pointcloud_depth.hpp"
#include "lidarvo/synthetic.hpp"
#include "lidarvo/tracking.hpp"
