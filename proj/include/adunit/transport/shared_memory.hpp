#ifndef ADUNIT__TRANSPORT__SHARED_MEMORY_HPP_
#define ADUNIT__TRANSPORT__SHARED_MEMORY_HPP_

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstddef>
#include <cstdlib>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>

#include "adunit/error.hpp"

namespace adunit::transport
{

/// OS object name for a topic: `/adunit.<topic>`, or `/adunit.<ns>.<topic>`
/// when ADUNIT_SEGMENT_PREFIX is set.
inline std::string segment_name(std::string_view topic)
{
  std::string name = "/adunit.";
  if (const char * ns = std::getenv("ADUNIT_SEGMENT_PREFIX"); ns != nullptr && *ns != '\0') {
    name += ns;
    name += '.';
  }
  name += topic;
  return name;
}

inline bool valid_topic_name(std::string_view topic)
{
  if (topic.empty() || topic.size() > 200) {
    return false;
  }
  for (char c : topic) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
      c == '_' || c == '-' || c == '.';
    if (!ok) {
      return false;
    }
  }
  return true;
}

/// Owning mapping of a POSIX shared-memory object.
class SharedMemory
{
public:
  SharedMemory() = default;

  static SharedMemory create(const std::string & name, std::size_t size)
  {
    int fd = ::shm_open(name.c_str(), O_CREAT | O_EXCL | O_RDWR, 0600);
    if (fd < 0) {
      if (errno == EEXIST) {
        throw Error(Errc::name_collision, "segment " + name + " already exists");
      }
      throw Error(Errc::segment_allocation_failure, "shm_open " + name + ": " + std::strerror(errno));
    }
    if (::ftruncate(fd, static_cast<off_t>(size)) != 0) {
      const int err = errno;
      ::close(fd);
      ::shm_unlink(name.c_str());
      throw Error(Errc::segment_allocation_failure, "ftruncate " + name + ": " + std::strerror(err));
    }
    void * addr = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    const int err = errno;
    ::close(fd);
    if (addr == MAP_FAILED) {
      ::shm_unlink(name.c_str());
      throw Error(Errc::segment_allocation_failure, "mmap " + name + ": " + std::strerror(err));
    }
    return SharedMemory(name, static_cast<std::byte *>(addr), size, true);
  }

  static SharedMemory open(const std::string & name)
  {
    int fd = ::shm_open(name.c_str(), O_RDWR, 0600);
    if (fd < 0) {
      throw Error(Errc::segment_not_found, "shm_open " + name + ": " + std::strerror(errno));
    }
    struct stat st {};
    if (::fstat(fd, &st) != 0 || st.st_size <= 0) {
      ::close(fd);
      throw Error(Errc::segment_corrupt, "segment " + name + " has no size");
    }
    const auto size = static_cast<std::size_t>(st.st_size);
    void * addr = ::mmap(nullptr, size, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    const int err = errno;
    ::close(fd);
    if (addr == MAP_FAILED) {
      throw Error(Errc::segment_allocation_failure, "mmap " + name + ": " + std::strerror(err));
    }
    return SharedMemory(name, static_cast<std::byte *>(addr), size, false);
  }

  static void unlink(const std::string & name) noexcept {::shm_unlink(name.c_str());}

  SharedMemory(const SharedMemory &) = delete;
  SharedMemory & operator=(const SharedMemory &) = delete;

  SharedMemory(SharedMemory && other) noexcept
  : name_(std::move(other.name_)),
    data_(std::exchange(other.data_, nullptr)),
    size_(std::exchange(other.size_, 0)),
    owner_(std::exchange(other.owner_, false)) {}

  SharedMemory & operator=(SharedMemory && other) noexcept
  {
    if (this != &other) {
      reset();
      name_ = std::move(other.name_);
      data_ = std::exchange(other.data_, nullptr);
      size_ = std::exchange(other.size_, 0);
      owner_ = std::exchange(other.owner_, false);
    }
    return *this;
  }

  ~SharedMemory() {reset();}

  std::byte * data() const noexcept {return data_;}
  std::size_t size() const noexcept {return size_;}
  const std::string & name() const noexcept {return name_;}
  bool owner() const noexcept {return owner_;}

  // The creator removes the name on destruction; existing mappings stay valid.
  void reset() noexcept
  {
    if (data_ != nullptr) {
      ::munmap(data_, size_);
      data_ = nullptr;
    }
    if (owner_) {
      ::shm_unlink(name_.c_str());
      owner_ = false;
    }
    size_ = 0;
  }

private:
  SharedMemory(std::string name, std::byte * data, std::size_t size, bool owner)
  : name_(std::move(name)), data_(data), size_(size), owner_(owner) {}

  std::string name_;
  std::byte * data_ {nullptr};
  std::size_t size_ {0};
  bool owner_ {false};
};

}  // namespace adunit::transport

#endif  // ADUNIT__TRANSPORT__SHARED_MEMORY_HPP_
