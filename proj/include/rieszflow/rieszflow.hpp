#pragma once
// Single include for the whole library.

#include <rieszflow/core.hpp>
#include <rieszflow/fourier.hpp>
#include <rieszflow/kernels.hpp>
#include <rieszflow/measures.hpp>
#include <rieszflow/energy.hpp>
#include <rieszflow/dynamics.hpp>
#include <rieszflow/jko.hpp>
#include <rieszflow/probe.hpp>
#include <rieszflow/config.hpp>
#include <rieszflow/io.hpp>
#include <rieszflow/driver.hpp>
