/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/error.hpp
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ttp {

/// Base of every error thrown by the library.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class DegenerateObservation : public Error
{
public:
    using Error::Error;
};

class DimensionMismatch : public Error
{
public:
    using Error::Error;
};

/// Malformed input text. Carries the 1-based line number when known (0 otherwise).
class ParseError : public Error
{
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line)
    {
    }
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class TopologyError : public Error
{
public:
    using Error::Error;
};

class DegenerateCovariance : public Error
{
public:
    using Error::Error;
};

class SingularSystem : public Error
{
public:
    using Error::Error;
};

class SingularHessian : public Error
{
public:
    SingularHessian(double condition_number, const std::string& what)
        : Error(what), condition_number_(condition_number)
    {
    }
    double condition_number() const noexcept { return condition_number_; }

private:
    double condition_number_;
};

/// Raised when an implicit-differentiation request is made at a non-stationary point.
class NotStationary : public Error
{
public:
    using Error::Error;
};

class EmptyMask : public Error
{
public:
    using Error::Error;
};

class ResolutionMismatch : public Error
{
public:
    using Error::Error;
};

} // namespace ttp
