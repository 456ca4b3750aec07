//! Core pinning and scheduling priority for the calling thread.

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Priority {
    Normal,
    Elevated,
}

impl Priority {
    pub fn as_str(self) -> &'static str {
        match self {
            Priority::Normal => "normal",
            Priority::Elevated => "elevated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorityOutcome {
    Applied,
    /// The platform refused the change; the run continues at normal priority.
    Denied,
}

/// Nice value requested for [`Priority::Elevated`].
pub const ELEVATED_NICE: i32 = -5;

/// Cores the process may run on, in ascending order.
#[cfg(target_os = "linux")]
pub fn allowed_cores() -> Vec<usize> {
    // SAFETY: the set is zero-initialized and sized by the type.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut set) != 0 {
            return Vec::new();
        }
        (0..libc::CPU_SETSIZE as usize)
            .filter(|&c| libc::CPU_ISSET(c, &set))
            .collect()
    }
}

#[cfg(not(target_os = "linux"))]
pub fn allowed_cores() -> Vec<usize> {
    Vec::new()
}

/// Number of cores available to this process (at least 1).
pub fn available_cores() -> usize {
    let n = allowed_cores().len();
    if n > 0 {
        n
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

pub fn pinning_supported() -> bool {
    cfg!(target_os = "linux") && !allowed_cores().is_empty()
}

/// Restricts the calling thread to `core`.
#[cfg(target_os = "linux")]
pub fn pin_to_core(core: usize) -> Result<(), EngineError> {
    let allowed = allowed_cores();
    if allowed.is_empty() {
        return Err(EngineError::PinUnsupported);
    }
    if !allowed.contains(&core) {
        return Err(EngineError::InvalidCore {
            core,
            available: allowed.len(),
        });
    }
    // SAFETY: `core` is below CPU_SETSIZE (it came from the allowed set).
    let rc = unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(core, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set)
    };
    if rc != 0 {
        return Err(EngineError::PinUnsupported);
    }
    Ok(())
}

#[cfg(not(target_os = "linux"))]
pub fn pin_to_core(_core: usize) -> Result<(), EngineError> {
    Err(EngineError::PinUnsupported)
}

/// Best-effort change of the calling thread's scheduling priority.
#[cfg(target_os = "linux")]
pub fn set_priority(level: Priority) -> PriorityOutcome {
    let nice = match level {
        // lowering back to 0 needs privilege too; a fresh thread is already at 0
        Priority::Normal => return PriorityOutcome::Applied,
        Priority::Elevated => ELEVATED_NICE,
    };
    // SAFETY: plain syscalls on the current thread id.
    unsafe {
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        if libc::setpriority(libc::PRIO_PROCESS, tid, nice) != 0 {
            return PriorityOutcome::Denied;
        }
        match current_nice() {
            Some(n) if n == nice => PriorityOutcome::Applied,
            _ => PriorityOutcome::Denied,
        }
    }
}

#[cfg(not(target_os = "linux"))]
pub fn set_priority(level: Priority) -> PriorityOutcome {
    match level {
        Priority::Normal => PriorityOutcome::Applied,
        Priority::Elevated => PriorityOutcome::Denied,
    }
}

/// Effective nice value of the calling thread.
#[cfg(target_os = "linux")]
pub fn current_nice() -> Option<i32> {
    // SAFETY: getpriority may legitimately return -1, so errno is cleared
    // first and checked after.
    unsafe {
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        *libc::__errno_location() = 0;
        let n = libc::getpriority(libc::PRIO_PROCESS, tid);
        (*libc::__errno_location() == 0).then_some(n)
    }
}

#[cfg(not(target_os = "linux"))]
pub fn current_nice() -> Option<i32> {
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrology::current_core_id;

    #[test]
    fn pinned_thread_stays_put() {
        if !pinning_supported() {
            return;
        }
        let core = allowed_cores()[0];
        std::thread::spawn(move || {
            pin_to_core(core).unwrap();
            for _ in 0..100_000 {
                assert_eq!(current_core_id(), Some(core));
            }
        })
        .join()
        .unwrap();
    }

    #[test]
    fn out_of_range_core_is_rejected() {
        if !pinning_supported() {
            assert_eq!(pin_to_core(99), Err(EngineError::PinUnsupported));
            return;
        }
        let bad = allowed_cores().last().unwrap() + 10_000;
        std::thread::spawn(move || {
            assert!(matches!(pin_to_core(bad), Err(EngineError::InvalidCore { .. })));
        })
        .join()
        .unwrap();
    }

    #[test]
    fn priority_is_best_effort() {
        std::thread::spawn(|| {
            assert_eq!(set_priority(Priority::Normal), PriorityOutcome::Applied);
            match set_priority(Priority::Elevated) {
                PriorityOutcome::Applied => assert_eq!(current_nice(), Some(ELEVATED_NICE)),
                PriorityOutcome::Denied => {}
            }
        })
        .join()
        .unwrap();
    }
}
