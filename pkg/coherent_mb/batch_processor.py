"""
Batch Run Processor with Worker Queue and Run Cache

Runs independent sweep rows (one propagation each) on a pool of worker
threads. Each row is looked up in the run cache first; fresh results are
stored back.

Features:
- Worker queue with configurable concurrency
- Priority queue support
- Cache lookup before computing
- Progress tracking and statistics
- Results collected by row index, independent of scheduling
"""

import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime
from queue import Empty, PriorityQueue
from typing import Any, Callable, Dict, List, Optional

from coherent_mb.database import DatabaseManager

logger = logging.getLogger(__name__)

RowResult = Dict[str, Any]


@dataclass(order=True)
class Task:
    """Task for processing queue"""
    priority: int
    row: int
    payload: Any = field(default=None, compare=False)
    callback: Optional[Callable] = field(default=None, compare=False)
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False)


class WorkerPool:
    """
    Worker pool running propagation tasks

    Manages worker threads that take tasks from a priority queue, check the
    run cache, and otherwise call `process(payload)`.
    """

    def __init__(
        self,
        process: Callable[[Any], RowResult],
        fingerprint: Optional[Callable[[Any], str]] = None,
        num_workers: int = 1,
    ):
        """
        Args:
            process: computes a row result (a dict the cache can store)
            fingerprint: cache key of a payload; None disables caching
            num_workers: Number of concurrent workers
        """
        if num_workers < 1:
            raise ValueError(f"num_workers must be >= 1, got {num_workers}")
        self.process = process
        self.fingerprint = fingerprint
        self.num_workers = num_workers

        self.task_queue = PriorityQueue()

        self.workers = []
        self.running = False

        # Exceptions raised by process(), by row
        self.errors: Dict[int, BaseException] = {}

        self.stats = {
            'total_tasks': 0,
            'completed': 0,
            'failed': 0,
            'cache_hits': 0,
            'runs': 0,
            'start_time': None,
            'end_time': None
        }
        self.stats_lock = threading.Lock()

    def add_task(
        self,
        row: int,
        payload: Any,
        priority: int = 5,
        callback: Optional[Callable] = None,
        metadata: Optional[Dict] = None
    ):
        """
        Add a task to the queue

        Args:
            row: row index, used to order results
            payload: input passed to process()
            priority: Task priority (lower = higher priority)
            callback: called as callback(row, result, metadata); result is None on failure
            metadata: Additional data to pass to callback
        """
        task = Task(
            priority=priority,
            row=row,
            payload=payload,
            callback=callback,
            metadata=metadata or {}
        )
        self.task_queue.put(task)

        with self.stats_lock:
            self.stats['total_tasks'] += 1

    def _run_task(self, worker_id: int, task: Task, db_manager: Optional[DatabaseManager]):
        key = None
        if db_manager is not None and self.fingerprint is not None:
            key = self.fingerprint(task.payload)
            cached = db_manager.get_cached_run(key)
            if cached:
                with self.stats_lock:
                    self.stats['cache_hits'] += 1
                    self.stats['completed'] += 1
                logger.info(f"[WORKER-{worker_id}] Cache hit for row {task.row}")
                if task.callback:
                    task.callback(task.row, cached, task.metadata)
                return

        try:
            result = self.process(task.payload)
        except Exception as e:
            logger.error(f"[WORKER-{worker_id}] Row {task.row} failed: {type(e).__name__}: {str(e)}")
            with self.stats_lock:
                self.stats['failed'] += 1
                self.errors[task.row] = e
            if task.callback:
                task.callback(task.row, None, task.metadata)
            return

        with self.stats_lock:
            self.stats['runs'] += 1
            self.stats['completed'] += 1

        if key is not None:
            db_manager.cache_run(key, result)

        logger.info(f"[WORKER-{worker_id}] Finished row {task.row}")
        if task.callback:
            task.callback(task.row, result, task.metadata)

    def _worker_loop(self, worker_id: int, db_manager: Optional[DatabaseManager]):
        """
        Worker thread main loop

        Args:
            worker_id: Worker identifier
            db_manager: Database manager for caching, or None
        """
        logger.debug(f"[WORKER-{worker_id}] Started")

        while self.running:
            try:
                task = self.task_queue.get(timeout=1.0)
            except Empty:
                continue

            try:
                self._run_task(worker_id, task, db_manager)
            except Exception as e:
                logger.error(f"[WORKER-{worker_id}] Unexpected error: {str(e)}")
                with self.stats_lock:
                    self.errors.setdefault(task.row, e)
            finally:
                self.task_queue.task_done()

        logger.debug(f"[WORKER-{worker_id}] Stopped")

    def start(self, db_manager: Optional[DatabaseManager] = None):
        """
        Start the worker pool

        Args:
            db_manager: Database manager, or None to run uncached
        """
        if self.running:
            logger.warning("[POOL] Already running")
            return

        self.running = True
        self.stats['start_time'] = datetime.now()

        for i in range(self.num_workers):
            worker = threading.Thread(
                target=self._worker_loop,
                args=(i, db_manager),
                daemon=True
            )
            worker.start()
            self.workers.append(worker)

        logger.info(f"[POOL] Started with {self.num_workers} workers")

    def stop(self, wait: bool = True):
        """
        Stop the worker pool

        Args:
            wait: If True, wait for all tasks to complete
        """
        if not self.running:
            return

        if wait:
            logger.debug("[POOL] Waiting for tasks to complete...")
            self.task_queue.join()

        self.running = False
        self.stats['end_time'] = datetime.now()

        for worker in self.workers:
            worker.join(timeout=2.0)

        self.workers.clear()
        logger.info("[POOL] Stopped")

    def get_stats(self) -> Dict[str, Any]:
        """Get processing statistics"""
        with self.stats_lock:
            stats_copy = self.stats.copy()

        if stats_copy['start_time'] and stats_copy['end_time']:
            duration = (stats_copy['end_time'] - stats_copy['start_time']).total_seconds()
            stats_copy['duration_seconds'] = duration

            if duration > 0:
                stats_copy['tasks_per_second'] = stats_copy['completed'] / duration

        return stats_copy

    def print_stats(self):
        """Print processing statistics"""
        stats = self.get_stats()

        print("\n[POOL] Processing Statistics:")
        print(f"  Total tasks: {stats['total_tasks']}")
        print(f"  Completed: {stats['completed']}")
        print(f"  Failed: {stats['failed']}")
        print(f"  Cache hits: {stats['cache_hits']}")
        print(f"  Runs: {stats['runs']}")

        if 'duration_seconds' in stats:
            print(f"  Duration: {stats['duration_seconds']:.2f}s")
            print(f"  Speed: {stats.get('tasks_per_second', 0):.2f} tasks/s")

        print(f"  Queue size: {self.task_queue.qsize()}")


class BatchProcessor:
    """
    High-level batch processor for sweep rows

    Starts a pool, queues one task per row and returns the results in row order.
    """

    def __init__(
        self,
        process: Callable[[Any], RowResult],
        fingerprint: Optional[Callable[[Any], str]] = None,
        db_manager: Optional[DatabaseManager] = None,
        num_workers: int = 1,
    ):
        """
        Args:
            process: computes one row result
            fingerprint: cache key of a payload
            db_manager: run cache, or None
            num_workers: Number of concurrent workers
        """
        self.db_manager = db_manager
        self.pool = WorkerPool(process=process, fingerprint=fingerprint, num_workers=num_workers)
        self.stats: Dict[str, Any] = {}

    def process_rows(
        self,
        payloads: List[Any],
        callback: Optional[Callable] = None,
        priority: int = 5,
        show_stats: bool = True,
    ) -> List[Optional[RowResult]]:
        """
        Process a batch of rows

        Args:
            payloads: one input per row
            callback: Function to call for each result
            priority: Priority for all tasks
            show_stats: print the pool statistics when done

        Returns:
            results in row order (None for failed rows)

        Raises:
            the first (by row index) exception raised by process()
        """
        logger.info(f"[POOL] Starting batch processing of {len(payloads)} rows")
        results: List[Optional[RowResult]] = [None] * len(payloads)
        lock = threading.Lock()

        def collect(row, result, metadata):
            with lock:
                results[row] = result
            if callback:
                callback(row, result, metadata)

        self.pool.start(self.db_manager)

        for row, payload in enumerate(payloads):
            self.pool.add_task(row, payload, priority=priority, callback=collect)

        self.pool.stop(wait=True)

        self.stats = self.pool.get_stats()
        if show_stats:
            self.pool.print_stats()

        if self.pool.errors:
            raise self.pool.errors[min(self.pool.errors)]
        return results
