#include "skyline/camera.hpp"

// Camera is header-only; this TU anchors the target.
