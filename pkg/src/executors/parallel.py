import logging
import multiprocessing
from concurrent.futures import FIRST_COMPLETED, Future, ProcessPoolExecutor, wait
from typing import Any, Callable, Iterable, Iterator, Optional, Set

from .base import Executor

logger = logging.getLogger(__name__)


class ProcessExecutor(Executor):
    """进程池执行器，用于 lambda 网格搜索这类互相独立的长任务

    - 同时在途的任务不超过 2 * max_workers，其余任务等待提交
    - 结果按完成顺序返回，调用方自行按键聚合
    - 默认用 spawn 启动子进程，函数和数据必须可以被 pickle
    """

    def __init__(self, max_workers: Optional[int] = None, start_method: str = "spawn"):
        if max_workers is not None and max_workers < 1:
            raise ValueError(f"max_workers 必须 >= 1，当前值: {max_workers}")
        self.max_workers = max_workers
        self.start_method = start_method
        self.window = (max_workers or 4) * 2

    def _pool(self) -> ProcessPoolExecutor:
        return ProcessPoolExecutor(max_workers=self.max_workers,
                                   mp_context=multiprocessing.get_context(self.start_method))

    def execute(self, func: Callable, data: Any) -> Iterator[Any]:
        with self._pool() as pool:
            yield pool.submit(func, data).result()

    def map(self, func: Callable, items: Iterable[Any]) -> Iterator[Any]:
        items = iter(items)
        with self._pool() as pool:
            pending: Set[Future] = set()
            exhausted = False
            while pending or not exhausted:
                while not exhausted and len(pending) < self.window:
                    try:
                        pending.add(pool.submit(func, next(items)))
                    except StopIteration:
                        exhausted = True
                if not pending:
                    break
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for future in done:
                    yield future.result()
            logger.debug("进程池任务全部完成")
